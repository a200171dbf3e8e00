//! Blocking HTTP client for the hub wire protocol.

use std::io::{Read, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::catalog::{ProductMeta, QuerySpec};
use crate::error::{Error, Result};
use crate::geo::{wkt, Crs};

/// Wire form of one catalog entry in a search response.
#[derive(Debug, Serialize, Deserialize)]
pub struct WireProduct {
    pub id: String,
    pub tile: String,
    pub sensing_time: String,
    pub cloud_pct: f64,
    pub footprint_wkt: String,
    pub online: bool,
    pub size: u64,
    pub md5: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SearchResponse {
    pub products: Vec<WireProduct>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrieveOutcome {
    AlreadyOnline,
    Accepted,
}

pub struct HubClient {
    base_url: String,
    agent: ureq::Agent,
}

impl HubClient {
    pub fn new(base_url: &str) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(10))
            .timeout_read(Duration::from_secs(60))
            .build();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url, path)
    }

    /// `GET /search` with the query's deterministic serialization.
    pub fn search(&self, query: &QuerySpec) -> Result<Vec<ProductMeta>> {
        let url = format!("{}?{}", self.url("/search"), query.to_query_string());
        let response = self.agent.get(&url).call().map_err(classify)?;
        let body = response
            .into_string()
            .map_err(|e| Error::HubUnreachable(format!("search response: {e}")))?;
        let parsed: SearchResponse = serde_json::from_str(&body)
            .map_err(|e| Error::Hub(format!("malformed search response: {e}")))?;
        parsed.products.into_iter().map(wire_to_meta).collect()
    }

    /// `POST /retrieve/<id>`; 200 means already online, 202 means the
    /// archive accepted the request. Safe to repeat.
    pub fn request_retrieval(&self, product_id: &str) -> Result<RetrieveOutcome> {
        let url = self.url(&format!("/retrieve/{product_id}"));
        let response = self.agent.post(&url).send_bytes(&[]).map_err(classify)?;
        match response.status() {
            200 => Ok(RetrieveOutcome::AlreadyOnline),
            202 => Ok(RetrieveOutcome::Accepted),
            other => Err(Error::Hub(format!(
                "retrieve {product_id}: unexpected status {other}"
            ))),
        }
    }

    /// `GET /status/<id>` -> whether the product can be downloaded now.
    pub fn status(&self, product_id: &str) -> Result<bool> {
        let url = self.url(&format!("/status/{product_id}"));
        let response = self.agent.get(&url).call().map_err(classify)?;
        let body = response
            .into_string()
            .map_err(|e| Error::HubUnreachable(format!("status response: {e}")))?;
        #[derive(Deserialize)]
        struct Status {
            online: bool,
        }
        let status: Status = serde_json::from_str(&body)
            .map_err(|e| Error::Hub(format!("malformed status response: {e}")))?;
        Ok(status.online)
    }

    /// Streams `GET /download/<id>` into the writer, resuming from
    /// `offset` with a range request when nonzero. Returns bytes written.
    /// Transport failures mid-stream surface as `HubUnreachable` so the
    /// caller can resume.
    pub fn download_to(&self, product_id: &str, offset: u64, sink: &mut dyn Write) -> Result<u64> {
        let url = self.url(&format!("/download/{product_id}"));
        let mut request = self.agent.get(&url);
        if offset > 0 {
            request = request.set("Range", &format!("bytes={offset}-"));
        }
        let response = request.call().map_err(classify)?;
        let declared: Option<u64> = response
            .header("Content-Length")
            .and_then(|v| v.parse().ok());
        let mut reader = response.into_reader();
        let mut buf = [0u8; 64 * 1024];
        let mut written = 0u64;
        loop {
            match reader.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => {
                    sink.write_all(&buf[..n])
                        .map_err(|e| Error::io_at(format!("write download {product_id}"), e))?;
                    written += n as u64;
                }
                Err(e) => {
                    return Err(Error::HubUnreachable(format!(
                        "download {product_id} interrupted after {written} bytes: {e}"
                    )))
                }
            }
        }
        if let Some(expected) = declared {
            if written < expected {
                return Err(Error::HubUnreachable(format!(
                    "download {product_id} truncated: {written} of {expected} bytes"
                )));
            }
        }
        Ok(written)
    }
}

fn classify(err: ureq::Error) -> Error {
    match err {
        ureq::Error::Status(code, response) => {
            let body = response.into_string().unwrap_or_default();
            Error::Hub(format!("status {code}: {body}"))
        }
        ureq::Error::Transport(t) => Error::HubUnreachable(t.to_string()),
    }
}

fn wire_to_meta(wire: WireProduct) -> Result<ProductMeta> {
    let sensing_time = chrono::DateTime::parse_from_rfc3339(&wire.sensing_time)
        .map_err(|e| Error::Hub(format!("product {}: sensing_time: {e}", wire.id)))?
        .with_timezone(&chrono::Utc);
    let footprint = wkt::parse_polygon(&wire.footprint_wkt, Crs::Wgs84)?;
    Ok(ProductMeta {
        product_id: wire.id,
        tile_id: wire.tile,
        sensing_time,
        cloud_cover_pct: wire.cloud_pct,
        footprint,
        data_coverage_pct: None,
        online: wire.online,
        size_bytes: wire.size,
        md5: wire.md5,
    })
}
