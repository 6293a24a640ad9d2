#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde_json::{json, Value};

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn afford(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_afford"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// The synthetic dataset with replay fixtures for every mode.
pub fn synth(dir: &Path) -> PathBuf {
    let root = dir.join("ds");
    let out = afford(&["synth", "--out", path_str(&root)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    root
}

pub fn write_config(path: &Path, value: &Value) {
    std::fs::write(path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

pub fn trace_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".json") && n != "config.json" && n != "report.json")
        .collect();
    names.sort();
    names
}

/// A detect/segment server: one box in the image's top-left quadrant and
/// its rasterized mask. Counts requests.
pub struct SpotServer {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
}

pub fn spot_server() -> SpotServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let requests = Arc::new(AtomicUsize::new(0));
    let counter = requests.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            let counter = counter.clone();
            std::thread::spawn(move || {
                let mut writer = stream.try_clone().unwrap();
                let mut reader = BufReader::new(stream);
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
                    let mut length = 0;
                    loop {
                        let mut h = String::new();
                        reader.read_line(&mut h).unwrap();
                        if h.trim().is_empty() {
                            break;
                        }
                        if let Some((k, v)) = h.split_once(':') {
                            if k.eq_ignore_ascii_case("content-length") {
                                length = v.trim().parse().unwrap();
                            }
                        }
                    }
                    let mut body = vec![0; length];
                    reader.read_exact(&mut body).unwrap();
                    counter.fetch_add(1, Ordering::SeqCst);
                    let body: Value = serde_json::from_slice(&body).unwrap();
                    let response = spot_response(&path, &body);
                    let text = response.to_string();
                    let head = format!(
                        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n",
                        text.len()
                    );
                    if writer.write_all(head.as_bytes()).is_err()
                        || writer.write_all(text.as_bytes()).is_err()
                    {
                        return;
                    }
                }
            });
        }
    });
    SpotServer { url, requests }
}

// The synthetic images are 64x48.
fn spot_response(path: &str, body: &Value) -> Value {
    match path {
        "/detect" => json!({"regions": [{"box": [0, 0, 32, 24], "score": 0.7}]}),
        "/segment" => {
            let n = body["prompts"].as_array().map_or(0, Vec::len);
            // rows 0..24 carry 32 foreground pixels each
            let mut canon = vec![0u32, 32];
            for _ in 1..24 {
                canon.extend([32, 32]);
            }
            canon.push(64 * 48 - 24 * 64 + 32);
            let mask = json!({"width": 64, "height": 48, "runs": canon, "score": 0.9});
            json!({"masks": vec![mask; n]})
        }
        _ => json!({"error": "unsupported"}),
    }
}
