//! Shared test support: an in-process mock of the segmentation/editing
//! service and small on-disk datasets.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use deda_core::imagecore::{decode_png, encode_mask_png, encode_png, save_mask, save_raster, Mask, Raster};
use serde_json::{json, Value};

#[derive(Debug, Clone, Default)]
pub struct MockConfig {
    /// The first `fail_edits` calls to /edit answer 500.
    pub fail_edits: usize,
    /// Every /edit answers 500.
    pub edit_always_fails: bool,
    /// /segment answers with masks one pixel too wide.
    pub bad_mask_dims: bool,
    /// Echo a different request id than the one sent.
    pub wrong_request_id: bool,
    /// Mask PNG returned verbatim by /segment when its size matches.
    pub fixture_mask: Option<Vec<u8>>,
}

#[derive(Debug, Default)]
pub struct MockState {
    pub handles: BTreeSet<String>,
    pub invert_calls: usize,
    pub edit_calls: usize,
    pub segment_calls: usize,
    /// Body of the most recent /invert request.
    pub last_invert: Option<Value>,
}

pub struct MockBackend {
    pub url: String,
    pub state: Arc<Mutex<MockState>>,
}

impl MockBackend {
    pub fn start(config: MockConfig) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let state = Arc::new(Mutex::new(MockState::default()));
        let shared = Arc::clone(&state);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (cfg, st) = (config.clone(), Arc::clone(&shared));
                thread::spawn(move || serve(stream, &cfg, &st));
            }
        });
        Self { url, state }
    }
}

struct Request {
    method: String,
    path: String,
    body: Vec<u8>,
}

fn read_request(stream: &TcpStream) -> Option<Request> {
    let mut r = BufReader::new(stream);
    let mut line = String::new();
    r.read_line(&mut line).ok()?;
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut len = 0usize;
    let mut chunked = false;
    loop {
        let mut h = String::new();
        r.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (k, v) = h.split_once(':')?;
        match k.trim().to_ascii_lowercase().as_str() {
            "content-length" => len = v.trim().parse().ok()?,
            "transfer-encoding" => chunked = v.trim().eq_ignore_ascii_case("chunked"),
            _ => {}
        }
    }
    let mut body = Vec::new();
    if chunked {
        loop {
            let mut size = String::new();
            r.read_line(&mut size).ok()?;
            let n = usize::from_str_radix(size.trim(), 16).ok()?;
            let mut chunk = vec![0; n + 2];
            r.read_exact(&mut chunk).ok()?;
            if n == 0 {
                break;
            }
            body.extend_from_slice(&chunk[..n]);
        }
    } else {
        body.resize(len, 0);
        r.read_exact(&mut body).ok()?;
    }
    Some(Request { method, path, body })
}

fn respond(mut stream: TcpStream, status: u16, body: &Value) {
    let text = body.to_string();
    let reason = match status {
        200 => "OK",
        404 => "Not Found",
        422 => "Unprocessable Entity",
        _ => "Internal Server Error",
    };
    let head = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        text.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(text.as_bytes());
    let _ = stream.flush();
}

fn error(rid: &Value, code: &str, message: &str) -> Value {
    json!({ "request_id": rid, "error": { "code": code, "message": message } })
}

fn decode(v: &Value) -> Option<Raster> {
    decode_png(&STANDARD.decode(v.as_str()?).ok()?).ok()
}

fn serve(stream: TcpStream, cfg: &MockConfig, state: &Mutex<MockState>) {
    let Some(req) = read_request(&stream) else { return };
    if req.method == "GET" && req.path == "/healthz" {
        return respond(stream, 200, &json!({ "status": "ok", "model_versions": { "mock": "1" } }));
    }
    let Ok(body) = serde_json::from_slice::<Value>(&req.body) else {
        return respond(stream, 422, &error(&Value::Null, "bad_json", "body is not JSON"));
    };
    let rid = if cfg.wrong_request_id { json!("someone-else") } else { body["request_id"].clone() };
    let (status, reply) = match req.path.as_str() {
        "/segment" => {
            state.lock().unwrap().segment_calls += 1;
            match decode(&body["image"]) {
                None => (422, error(&rid, "undecodable", "image is not a PNG")),
                Some(img) => {
                    let (w, h) = (img.width() + cfg.bad_mask_dims as u32, img.height());
                    let blank = img.data().chunks_exact(img.channels()).all(|p| p == &img.data()[..img.channels()]);
                    let masks: Vec<String> = if blank {
                        Vec::new()
                    } else {
                        let png = match &cfg.fixture_mask {
                            Some(m) if decode_png(m).is_ok_and(|r| r.width() == w && r.height() == h) => m.clone(),
                            _ => {
                                let mut m = Mask::filled(w, h, 0).unwrap();
                                for y in h / 4..3 * h / 4 {
                                    for x in w / 4..3 * w / 4 {
                                        m.set(x, y, 255);
                                    }
                                }
                                encode_mask_png(&m).unwrap()
                            }
                        };
                        vec![STANDARD.encode(png)]
                    };
                    (200, json!({ "request_id": rid, "masks": masks }))
                }
            }
        }
        "/invert" => {
            let pngs = body["cdp_pngs"].as_array().cloned().unwrap_or_default();
            if pngs.is_empty() || !pngs.iter().all(|p| decode(p).is_some_and(|r| r.is_rgba())) {
                (422, error(&rid, "bad_inputs", "need at least one RGBA CDP"))
            } else {
                let mut st = state.lock().unwrap();
                st.invert_calls += 1;
                let handle = format!("h{}-{}", body["class_id"], st.invert_calls);
                st.handles.insert(handle.clone());
                st.last_invert = Some(body.clone());
                (200, json!({ "request_id": rid, "handle": handle, "timing": { "seconds": 0.0 } }))
            }
        }
        "/edit" => {
            let mut st = state.lock().unwrap();
            st.edit_calls += 1;
            let handle = body["handle"].as_str().unwrap_or_default();
            if !st.handles.contains(handle) {
                (404, error(&rid, "unknown_handle", handle))
            } else if cfg.edit_always_fails || st.edit_calls <= cfg.fail_edits {
                (500, error(&rid, "generation_failed", "injected failure"))
            } else {
                drop(st);
                let strength = body["strength"].as_f64().unwrap_or(-1.0);
                match decode(&body["cdp_png"]) {
                    Some(img) if img.is_rgba() && strength == 0.0 => {
                        (200, json!({ "request_id": rid, "cdp_png": body["cdp_png"] }))
                    }
                    Some(mut img) if img.is_rgba() => {
                        let shift = (body["seed"].as_u64().unwrap_or(0) % 50 + 1) as u8;
                        for p in img.data_mut().chunks_exact_mut(4) {
                            for c in &mut p[..3] {
                                *c = c.wrapping_add(shift);
                            }
                        }
                        (200, json!({ "request_id": rid, "cdp_png": STANDARD.encode(encode_png(&img).unwrap()) }))
                    }
                    _ => (422, error(&rid, "bad_inputs", "cdp_png must be an RGBA PNG")),
                }
            }
        }
        _ => (404, error(&rid, "not_found", &req.path)),
    };
    respond(stream, status, &reply)
}

/// How an image's mask is drawn in [`write_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Square,
    Full,
    Empty,
}

pub const SIDE: u32 = 24;

pub fn image(seed: u32) -> Raster {
    let data = (0..SIDE * SIDE * 3).map(|i| ((i * 7 + seed * 31) % 200) as u8 + 20).collect();
    Raster::new(SIDE, SIDE, 3, data).unwrap()
}

pub fn mask(kind: MaskKind, seed: u32) -> Mask {
    let mut m = Mask::filled(SIDE, SIDE, 0).unwrap();
    let off = 3 + seed % 5;
    for y in 0..SIDE {
        for x in 0..SIDE {
            let inside = match kind {
                MaskKind::Full => true,
                MaskKind::Empty => false,
                MaskKind::Square => (off..off + 12).contains(&x) && (off..off + 10).contains(&y),
            };
            if inside {
                m.set(x, y, 255);
            }
        }
    }
    m
}

/// Write `images/<name>`, `masks/<stem>.png` and `classes.csv` under `dir`.
pub fn write_dataset(dir: &Path, items: &[(&str, &str, MaskKind)]) {
    fs::create_dir_all(dir.join("images")).unwrap();
    fs::create_dir_all(dir.join("masks")).unwrap();
    let mut csv = String::from("image,class\n");
    for (i, (name, class, kind)) in items.iter().enumerate() {
        save_raster(&image(i as u32), &dir.join("images").join(name)).unwrap();
        let stem = Path::new(name).file_stem().unwrap().to_str().unwrap();
        save_mask(&mask(*kind, i as u32), &dir.join("masks").join(format!("{stem}.png"))).unwrap();
        csv.push_str(&format!("{name},{class}\n"));
    }
    fs::write(dir.join("classes.csv"), csv).unwrap();
}

/// Four valid images over two classes plus one with a full-coverage mask.
pub fn standard_dataset(dir: &Path) {
    write_dataset(
        dir,
        &[
            ("a1.png", "cat", MaskKind::Square),
            ("a2.png", "cat", MaskKind::Square),
            ("b1.png", "dog", MaskKind::Square),
            ("b2.png", "dog", MaskKind::Square),
            ("full.png", "dog", MaskKind::Full),
        ],
    );
}
