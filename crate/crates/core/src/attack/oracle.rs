//! Classifier oracles: the trait, a query-counting wrapper and the TCP
//! client for externally served models.
//!
//! Wire protocol: one JSON object per line, UTF-8.
//! Request `{"id": N, "op": "probs", "image": "<base64 PNG>"}`,
//! response `{"id": N, "probs": [...]}` or `{"id": N, "error": "..."}`.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagecore::{encode_png, ImageError, RasterImage};

/// Tolerance on the probability sum.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("cannot reach oracle at {endpoint}: {source}")]
    Connect { endpoint: String, source: io::Error },
    #[error("oracle i/o: {0}")]
    Io(#[from] io::Error),
    #[error("oracle protocol violation: {0}")]
    Protocol(String),
    #[error("oracle returned invalid probabilities: {0}")]
    NotNormalized(String),
    #[error("oracle reported: {0}")]
    Remote(String),
    #[error("image encoding: {0}")]
    Image(#[from] ImageError),
}

/// Anything that maps an image to class probabilities.
pub trait ClassifierOracle {
    /// Number of classes, once known.
    fn class_count(&self) -> Option<usize>;

    fn probs(&mut self, image: &RasterImage) -> Result<Vec<f64>, OracleError>;
}

impl<O: ClassifierOracle + ?Sized> ClassifierOracle for &mut O {
    fn class_count(&self) -> Option<usize> {
        (**self).class_count()
    }

    fn probs(&mut self, image: &RasterImage) -> Result<Vec<f64>, OracleError> {
        (**self).probs(image)
    }
}

impl<O: ClassifierOracle + ?Sized> ClassifierOracle for Box<O> {
    fn class_count(&self) -> Option<usize> {
        (**self).class_count()
    }

    fn probs(&mut self, image: &RasterImage) -> Result<Vec<f64>, OracleError> {
        (**self).probs(image)
    }
}

/// Check length, sign and normalization of a probability vector.
pub fn validate_probs(probs: &[f64], expected_len: Option<usize>) -> Result<(), OracleError> {
    if probs.is_empty() {
        return Err(OracleError::NotNormalized("empty vector".into()));
    }
    if let Some(n) = expected_len {
        if probs.len() != n {
            return Err(OracleError::NotNormalized(format!(
                "{} entries, expected {n}",
                probs.len()
            )));
        }
    }
    if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(OracleError::NotNormalized(format!("entry {bad}")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(OracleError::NotNormalized(format!("sum {sum}")));
    }
    Ok(())
}

/// Index of the largest probability; ties go to the smallest index.
pub fn argmax(probs: &[f64]) -> usize {
    probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Counts `probs` calls on the wrapped oracle.
#[derive(Debug)]
pub struct CountingOracle<O> {
    inner: O,
    queries: usize,
}

impl<O> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        Self { inner, queries: 0 }
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<O: ClassifierOracle> ClassifierOracle for CountingOracle<O> {
    fn class_count(&self) -> Option<usize> {
        self.inner.class_count()
    }

    fn probs(&mut self, image: &RasterImage) -> Result<Vec<f64>, OracleError> {
        self.queries += 1;
        self.inner.probs(image)
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct OracleRequest {
    pub id: u64,
    pub op: String,
    pub image: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct OracleResponse {
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl OracleRequest {
    pub fn probs(id: u64, image: &RasterImage) -> Result<Self, ImageError> {
        Ok(Self {
            id,
            op: "probs".into(),
            image: BASE64.encode(encode_png(image)?),
        })
    }
}

/// Client for the line-delimited JSON oracle service. One request in
/// flight per connection.
#[derive(Debug)]
pub struct OracleClient {
    endpoint: String,
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
    class_count: Option<usize>,
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

impl OracleClient {
    pub fn connect(endpoint: &str) -> Result<Self, OracleError> {
        let connect_err = |source| OracleError::Connect {
            endpoint: endpoint.to_string(),
            source,
        };
        let addr = endpoint
            .to_socket_addrs()
            .map_err(connect_err)?
            .next()
            .ok_or_else(|| connect_err(io::Error::new(io::ErrorKind::NotFound, "no address")))?;
        let stream = TcpStream::connect_timeout(&addr, DEFAULT_TIMEOUT).map_err(connect_err)?;
        stream.set_read_timeout(Some(DEFAULT_TIMEOUT))?;
        stream.set_write_timeout(Some(DEFAULT_TIMEOUT))?;
        stream.set_nodelay(true)?;
        Ok(Self {
            endpoint: endpoint.to_string(),
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            next_id: 1,
            class_count: None,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

/// Connect to an oracle service at `HOST:PORT`.
pub fn oracle_client(endpoint: &str) -> Result<OracleClient, OracleError> {
    OracleClient::connect(endpoint)
}

impl ClassifierOracle for OracleClient {
    fn class_count(&self) -> Option<usize> {
        self.class_count
    }

    fn probs(&mut self, image: &RasterImage) -> Result<Vec<f64>, OracleError> {
        let id = self.next_id;
        self.next_id += 1;
        let mut line = serde_json::to_string(&OracleRequest::probs(id, image)?)
            .map_err(|e| OracleError::Protocol(e.to_string()))?;
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;

        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(OracleError::Protocol("connection closed".into()));
        }
        let resp: OracleResponse = serde_json::from_str(reply.trim_end())
            .map_err(|e| OracleError::Protocol(format!("bad response line: {e}")))?;
        if resp.id != Some(id) {
            return Err(OracleError::Protocol(format!(
                "response id {:?} for request {id}",
                resp.id
            )));
        }
        match (resp.probs, resp.error) {
            (_, Some(err)) => Err(OracleError::Remote(err)),
            (Some(probs), None) => {
                validate_probs(&probs, self.class_count)?;
                self.class_count = Some(probs.len());
                Ok(probs)
            }
            (None, None) => Err(OracleError::Protocol(
                "response has neither probs nor error".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;
    use std::thread;

    /// Serve one connection, answering each line with `respond`.
    fn mock_server(respond: impl Fn(OracleRequest) -> String + Send + 'static) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut writer = stream.try_clone().unwrap();
            for line in BufReader::new(stream).lines() {
                let Ok(line) = line else { break };
                let req: OracleRequest = serde_json::from_str(&line).unwrap();
                let mut out = respond(req);
                out.push('\n');
                if writer.write_all(out.as_bytes()).is_err() {
                    break;
                }
            }
        });
        addr
    }

    fn img() -> RasterImage {
        RasterImage::filled(4, 4, [10, 20, 30])
    }

    #[test]
    fn fixed_vector_echo() {
        let addr = mock_server(|req| {
            assert_eq!(req.op, "probs");
            let png = BASE64.decode(req.image).unwrap();
            assert_eq!(crate::imagecore::decode_png(&png).unwrap(), img());
            format!(r#"{{"id":{},"probs":[0.25,0.75]}}"#, req.id)
        });
        let mut client = oracle_client(&addr).unwrap();
        assert_eq!(client.class_count(), None);
        assert_eq!(client.probs(&img()).unwrap(), vec![0.25, 0.75]);
        assert_eq!(client.class_count(), Some(2));
    }

    #[test]
    fn sequential_requests_match_ids() {
        let addr = mock_server(|req| {
            let p = (req.id % 10) as f64 / 10.0;
            format!(r#"{{"id":{},"probs":[{p},{}]}}"#, req.id, 1.0 - p)
        });
        let mut client = oracle_client(&addr).unwrap();
        for i in 1..=100u64 {
            let p = client.probs(&img()).unwrap();
            assert!((p[0] - (i % 10) as f64 / 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn malformed_and_bad_responses() {
        let addr = mock_server(|req| match req.id {
            1 => "this is not json".into(),
            2 => r#"{"id":99,"probs":[1.0]}"#.into(),
            3 => r#"{"id":3,"probs":[0.5,0.6]}"#.into(),
            4 => r#"{"id":4,"error":"model exploded"}"#.into(),
            5 => r#"{"id":5}"#.into(),
            _ => format!(r#"{{"id":{},"probs":[0.5,-0.5,1.0]}}"#, req.id),
        });
        let mut client = oracle_client(&addr).unwrap();
        assert!(matches!(
            client.probs(&img()),
            Err(OracleError::Protocol(_))
        ));
        assert!(matches!(
            client.probs(&img()),
            Err(OracleError::Protocol(_))
        ));
        assert!(matches!(
            client.probs(&img()),
            Err(OracleError::NotNormalized(_))
        ));
        assert!(
            matches!(client.probs(&img()), Err(OracleError::Remote(m)) if m == "model exploded")
        );
        assert!(matches!(
            client.probs(&img()),
            Err(OracleError::Protocol(_))
        ));
        assert!(matches!(
            client.probs(&img()),
            Err(OracleError::NotNormalized(_))
        ));
    }

    #[test]
    fn unreachable_endpoint() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        drop(listener);
        assert!(matches!(
            oracle_client(&addr),
            Err(OracleError::Connect { .. })
        ));
    }

    #[test]
    fn argmax_ties_to_smallest() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
