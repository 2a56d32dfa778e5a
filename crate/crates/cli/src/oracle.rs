use patchrev_core::attack::{
    oracle_client, ClassifierOracle, OracleClient, OracleError, ToyClassifier,
};
use patchrev_core::RasterImage;

use crate::{config, Failure};

pub const ORACLE_ENV: &str = "PATCHREV_ORACLE";

/// The environment variable wins over the flag.
pub fn resolve(flag: &str) -> String {
    std::env::var(ORACLE_ENV)
        .ok()
        .filter(|s| !s.trim().is_empty())
        .unwrap_or_else(|| flag.to_string())
}

pub enum Oracle {
    Toy(ToyClassifier),
    Remote(OracleClient),
}

impl Oracle {
    pub fn open(spec: &str) -> Result<Self, Failure> {
        let spec = spec.trim();
        if spec == "toy" {
            return Ok(Oracle::Toy(ToyClassifier::toy(0)));
        }
        if let Some(seed) = spec.strip_prefix("toy:") {
            let seed = seed
                .parse()
                .map_err(|_| config(format!("bad toy oracle seed {seed:?}")))?;
            return Ok(Oracle::Toy(ToyClassifier::toy(seed)));
        }
        if !spec.contains(':') {
            return Err(config(format!(
                "oracle {spec:?} is neither toy nor HOST:PORT"
            )));
        }
        Ok(Oracle::Remote(oracle_client(spec)?))
    }

    pub fn toy(&self) -> Option<&ToyClassifier> {
        match self {
            Oracle::Toy(t) => Some(t),
            Oracle::Remote(_) => None,
        }
    }
}

impl ClassifierOracle for Oracle {
    fn class_count(&self) -> Option<usize> {
        match self {
            Oracle::Toy(t) => t.class_count(),
            Oracle::Remote(c) => c.class_count(),
        }
    }

    fn probs(&mut self, image: &RasterImage) -> Result<Vec<f64>, OracleError> {
        match self {
            Oracle::Toy(t) => t.probs(image),
            Oracle::Remote(c) => c.probs(image),
        }
    }
}
