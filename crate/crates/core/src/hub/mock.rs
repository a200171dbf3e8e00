//! Deterministic in-process hub speaking the catalog/retrieval wire
//! protocol over plain HTTP/1.1. Serves scripted products, logs every
//! request with the injected clock's timestamps, and can cut download
//! connections at an exact byte offset for resume tests.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use chrono::{DateTime, SecondsFormat, Utc};
use md5::{Digest, Md5};

use crate::catalog::ProductMeta;
use crate::error::{Error, Result};
use crate::geo::wkt;
use crate::hub::client::{SearchResponse, WireProduct};
use crate::hub::Clock;

/// One scripted product.
pub struct MockProduct {
    pub meta: ProductMeta,
    pub payload: Vec<u8>,
    /// Delay between the retrieval request and the product surfacing.
    /// `None` means it never comes online (timeout scenarios).
    pub lta_delay: Option<Duration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestKind {
    Search,
    Retrieve,
    Status,
    Download,
}

#[derive(Debug, Clone)]
pub struct LogEntry {
    pub at: DateTime<Utc>,
    pub kind: RequestKind,
    pub product_id: Option<String>,
    /// Start offset of a ranged download request.
    pub range_start: Option<u64>,
}

/// Connection faults, keyed by product.
#[derive(Debug, Clone, Copy)]
pub enum Fault {
    /// Close the socket after this many body bytes, once.
    CutOnce { after_bytes: usize },
    /// Close the socket after this many body bytes, every time.
    CutAlways { after_bytes: usize },
}

struct ProductState {
    meta: ProductMeta,
    payload: Vec<u8>,
    md5_hex: String,
    lta_delay: Option<Duration>,
    initially_online: bool,
    lta_requested_at: Option<DateTime<Utc>>,
}

struct HubState {
    products: Mutex<BTreeMap<String, ProductState>>,
    log: Mutex<Vec<LogEntry>>,
    faults: Mutex<HashMap<String, Fault>>,
    clock: Arc<dyn Clock>,
    stopping: AtomicBool,
}

pub struct MockHub {
    state: Arc<HubState>,
    addr: std::net::SocketAddr,
    accept_thread: Option<JoinHandle<()>>,
}

impl MockHub {
    /// Binds an ephemeral port on localhost and starts serving.
    pub fn start(products: Vec<MockProduct>, clock: Arc<dyn Clock>) -> Result<Self> {
        Self::start_on(products, clock, 0)
    }

    /// Binds the given localhost port (0 for ephemeral) and starts serving.
    pub fn start_on(products: Vec<MockProduct>, clock: Arc<dyn Clock>, port: u16) -> Result<Self> {
        let mut map = BTreeMap::new();
        for p in products {
            let md5_hex = hex::encode(Md5::digest(&p.payload));
            let initially_online = p.meta.online;
            map.insert(
                p.meta.product_id.clone(),
                ProductState {
                    md5_hex,
                    initially_online,
                    lta_requested_at: None,
                    lta_delay: p.lta_delay,
                    meta: p.meta,
                    payload: p.payload,
                },
            );
        }
        let state = Arc::new(HubState {
            products: Mutex::new(map),
            log: Mutex::new(Vec::new()),
            faults: Mutex::new(HashMap::new()),
            clock,
            stopping: AtomicBool::new(false),
        });

        let listener = TcpListener::bind(("127.0.0.1", port))
            .map_err(|e| Error::io_at("bind mock hub", e))?;
        let addr = listener.local_addr().map_err(|e| Error::io_at("mock hub addr", e))?;

        let accept_state = Arc::clone(&state);
        let accept_thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if accept_state.stopping.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(stream) => {
                        let conn_state = Arc::clone(&accept_state);
                        std::thread::spawn(move || {
                            let _ = handle_connection(stream, &conn_state);
                        });
                    }
                    Err(_) => break,
                }
            }
        });

        Ok(Self {
            state,
            addr,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn request_log(&self) -> Vec<LogEntry> {
        self.state.log.lock().unwrap().clone()
    }

    pub fn set_fault(&self, product_id: &str, fault: Fault) {
        self.state
            .faults
            .lock()
            .unwrap()
            .insert(product_id.to_string(), fault);
    }

    pub fn clear_fault(&self, product_id: &str) {
        self.state.faults.lock().unwrap().remove(product_id);
    }

    /// Flips one payload byte without refreshing the advertised checksum.
    pub fn corrupt_payload(&self, product_id: &str, at: usize) {
        let mut products = self.state.products.lock().unwrap();
        if let Some(p) = products.get_mut(product_id) {
            if at < p.payload.len() {
                p.payload[at] ^= 0xFF;
            }
        }
    }

    /// The checksum the hub advertises for a product.
    pub fn advertised_md5(&self, product_id: &str) -> Option<String> {
        self.state
            .products
            .lock()
            .unwrap()
            .get(product_id)
            .map(|p| p.md5_hex.clone())
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.state.stopping.store(true, Ordering::SeqCst);
        // connect once to unblock the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for MockHub {
    fn drop(&mut self) {
        if self.accept_thread.is_some() {
            self.stop();
        }
    }
}

/// Largest number of entries of one kind inside any half-open sliding
/// window of the given length; 1 means the rate limit held.
pub fn max_requests_in_window(log: &[LogEntry], kind: RequestKind, window: Duration) -> usize {
    let times: Vec<DateTime<Utc>> = log.iter().filter(|e| e.kind == kind).map(|e| e.at).collect();
    let window = chrono::Duration::from_std(window).expect("window in range");
    let mut worst = 0;
    for (i, &start) in times.iter().enumerate() {
        let count = times[i..].iter().take_while(|&&t| t - start < window).count();
        worst = worst.max(count);
    }
    worst
}

fn handle_connection(stream: TcpStream, state: &HubState) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    if request_line.trim().is_empty() {
        return Ok(());
    }
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let target = parts.next().unwrap_or("").to_string();

    let mut content_length = 0usize;
    let mut range_start: Option<u64> = None;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            let name = name.trim().to_ascii_lowercase();
            let value = value.trim();
            if name == "content-length" {
                content_length = value.parse().unwrap_or(0);
            } else if name == "range" {
                range_start = value
                    .strip_prefix("bytes=")
                    .and_then(|v| v.split('-').next())
                    .and_then(|v| v.parse().ok());
            }
        }
    }
    if content_length > 0 {
        let mut body = vec![0u8; content_length];
        reader.read_exact(&mut body)?;
    }

    let (path, query) = match target.split_once('?') {
        Some((p, q)) => (p.to_string(), q.to_string()),
        None => (target.clone(), String::new()),
    };
    let path = percent_decode(&path);
    let query = percent_decode(&query);

    let mut stream = stream;
    match (method.as_str(), path.as_str()) {
        ("GET", "/search") => respond_search(&mut stream, state, &query),
        ("POST", _) if path.starts_with("/retrieve/") => {
            respond_retrieve(&mut stream, state, &path["/retrieve/".len()..])
        }
        ("GET", _) if path.starts_with("/status/") => {
            respond_status(&mut stream, state, &path["/status/".len()..])
        }
        ("GET", _) if path.starts_with("/download/") => {
            respond_download(&mut stream, state, &path["/download/".len()..], range_start)
        }
        _ => write_response(&mut stream, 404, "Not Found", b"{\"error\":\"not found\"}", &[]),
    }
}

fn log_request(state: &HubState, kind: RequestKind, product_id: Option<&str>, range_start: Option<u64>) {
    state.log.lock().unwrap().push(LogEntry {
        at: state.clock.now(),
        kind,
        product_id: product_id.map(str::to_string),
        range_start,
    });
}

fn product_online(p: &ProductState, now: DateTime<Utc>) -> bool {
    if p.initially_online {
        return true;
    }
    match (p.lta_requested_at, p.lta_delay) {
        (Some(at), Some(delay)) => {
            let delay = chrono::Duration::from_std(delay).expect("delay in range");
            now - at >= delay
        }
        _ => false,
    }
}

fn respond_search(stream: &mut TcpStream, state: &HubState, query: &str) -> std::io::Result<()> {
    log_request(state, RequestKind::Search, None, None);
    let mut params: HashMap<&str, &str> = HashMap::new();
    for pair in query.split('&') {
        if let Some((k, v)) = pair.split_once('=') {
            params.insert(k, v);
        }
    }
    let parse_time = |key: &str| -> Option<DateTime<Utc>> {
        params
            .get(key)
            .and_then(|v| DateTime::parse_from_rfc3339(v).ok())
            .map(|t| t.with_timezone(&Utc))
    };
    let (Some(start), Some(end)) = (parse_time("start"), parse_time("end")) else {
        return write_response(stream, 400, "Bad Request", b"{\"error\":\"bad interval\"}", &[]);
    };
    let cloud_max: f64 = params
        .get("cloudmax")
        .and_then(|v| v.parse().ok())
        .unwrap_or(100.0);
    let bbox: Option<[f64; 4]> = params.get("bbox").and_then(|v| {
        let nums: Vec<f64> = v.split(',').filter_map(|x| x.parse().ok()).collect();
        nums.try_into().ok()
    });

    let now = state.clock.now();
    let products = state.products.lock().unwrap();
    let mut out = Vec::new();
    for p in products.values() {
        let meta = &p.meta;
        if meta.sensing_time < start || meta.sensing_time >= end {
            continue;
        }
        if meta.cloud_cover_pct > cloud_max {
            continue;
        }
        if let Some([w, s, e, n]) = bbox {
            let fp = meta.footprint.bounding_rect();
            let disjoint = fp.max_x < w || fp.min_x > e || fp.max_y < s || fp.min_y > n;
            if disjoint {
                continue;
            }
        }
        out.push(WireProduct {
            id: meta.product_id.clone(),
            tile: meta.tile_id.clone(),
            sensing_time: meta.sensing_time.to_rfc3339_opts(SecondsFormat::Secs, true),
            cloud_pct: meta.cloud_cover_pct,
            footprint_wkt: wkt::format_polygon(&meta.footprint),
            online: product_online(p, now),
            size: p.payload.len() as u64,
            md5: Some(p.md5_hex.clone()),
        });
    }
    let body = serde_json::to_vec(&SearchResponse { products: out }).unwrap_or_default();
    write_response(stream, 200, "OK", &body, &[])
}

fn respond_retrieve(stream: &mut TcpStream, state: &HubState, id: &str) -> std::io::Result<()> {
    log_request(state, RequestKind::Retrieve, Some(id), None);
    let now = state.clock.now();
    let mut products = state.products.lock().unwrap();
    let Some(p) = products.get_mut(id) else {
        return write_response(stream, 404, "Not Found", b"{\"error\":\"unknown product\"}", &[]);
    };
    if product_online(p, now) {
        return write_response(stream, 200, "OK", b"{\"online\":true}", &[]);
    }
    // idempotent: the first request starts the clock, repeats do not reset it
    if p.lta_requested_at.is_none() {
        p.lta_requested_at = Some(now);
    }
    write_response(stream, 202, "Accepted", b"{\"online\":false}", &[])
}

fn respond_status(stream: &mut TcpStream, state: &HubState, id: &str) -> std::io::Result<()> {
    log_request(state, RequestKind::Status, Some(id), None);
    let now = state.clock.now();
    let products = state.products.lock().unwrap();
    let Some(p) = products.get(id) else {
        return write_response(stream, 404, "Not Found", b"{\"error\":\"unknown product\"}", &[]);
    };
    let body = if product_online(p, now) {
        &b"{\"online\":true}"[..]
    } else {
        &b"{\"online\":false}"[..]
    };
    write_response(stream, 200, "OK", body, &[])
}

fn respond_download(
    stream: &mut TcpStream,
    state: &HubState,
    id: &str,
    range_start: Option<u64>,
) -> std::io::Result<()> {
    log_request(state, RequestKind::Download, Some(id), range_start);
    let now = state.clock.now();
    let (body, total_len, fault) = {
        let products = state.products.lock().unwrap();
        let Some(p) = products.get(id) else {
            return write_response(stream, 404, "Not Found", b"{\"error\":\"unknown product\"}", &[]);
        };
        if !product_online(p, now) {
            return write_response(stream, 403, "Forbidden", b"{\"error\":\"offline\"}", &[]);
        }
        let total = p.payload.len() as u64;
        let offset = range_start.unwrap_or(0).min(total);
        let body = p.payload[offset as usize..].to_vec();
        let mut faults = state.faults.lock().unwrap();
        let fault = faults.get(id).copied();
        if matches!(fault, Some(Fault::CutOnce { .. })) {
            faults.remove(id);
        }
        (body, total, fault)
    };

    let cut_after = match fault {
        Some(Fault::CutOnce { after_bytes }) | Some(Fault::CutAlways { after_bytes }) => {
            Some(after_bytes)
        }
        None => None,
    };

    let (code, reason) = if range_start.is_some() { (206, "Partial Content") } else { (200, "OK") };
    let offset = range_start.unwrap_or(0);
    let content_range = format!(
        "Content-Range: bytes {}-{}/{}",
        offset,
        total_len.saturating_sub(1),
        total_len
    );
    let extra: Vec<&str> = if range_start.is_some() {
        vec![content_range.as_str()]
    } else {
        Vec::new()
    };

    match cut_after {
        Some(cut) if cut < body.len() => {
            // advertise the full length, deliver a prefix, drop the socket
            write_head(stream, code, reason, body.len(), "application/octet-stream", &extra)?;
            stream.write_all(&body[..cut])?;
            stream.flush()?;
            stream.shutdown(Shutdown::Both)?;
            Ok(())
        }
        _ => {
            write_head(stream, code, reason, body.len(), "application/octet-stream", &extra)?;
            stream.write_all(&body)?;
            stream.flush()
        }
    }
}

fn write_head(
    stream: &mut TcpStream,
    code: u16,
    reason: &str,
    content_length: usize,
    content_type: &str,
    extra_headers: &[&str],
) -> std::io::Result<()> {
    let mut head = format!(
        "HTTP/1.1 {code} {reason}\r\nContent-Length: {content_length}\r\nContent-Type: {content_type}\r\nConnection: close\r\n"
    );
    for h in extra_headers {
        head.push_str(h);
        head.push_str("\r\n");
    }
    head.push_str("\r\n");
    stream.write_all(head.as_bytes())
}

fn write_response(
    stream: &mut TcpStream,
    code: u16,
    reason: &str,
    body: &[u8],
    extra_headers: &[&str],
) -> std::io::Result<()> {
    write_head(stream, code, reason, body.len(), "application/json", extra_headers)?;
    stream.write_all(body)?;
    stream.flush()
}

fn percent_decode(input: &str) -> String {
    let bytes = input.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 2 < bytes.len() {
            if let Ok(v) = u8::from_str_radix(&input[i + 1..i + 3], 16) {
                out.push(v);
                i += 3;
                continue;
            }
        }
        out.push(bytes[i]);
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}
