use std::collections::BTreeMap;
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("own host {0:?} appears in the peer table")]
    SelfPeer(String),
    #[error("proxy {proxy:?} for {host:?} is not in the peer table")]
    UnknownProxy { host: String, proxy: String },
    #[error("expected label=value, got {0:?}")]
    BadPair(String),
    #[error("queue bound must be at least 1")]
    ZeroBound,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouterConfig {
    /// This router's host label.
    pub host: String,
    /// Address to listen on, e.g. `127.0.0.1:7400`; port 0 picks one.
    pub listen: String,
    /// Host label to router endpoint.
    pub peers: BTreeMap<String, String>,
    /// Peer host label to the label of the proxy router that holds its
    /// traffic while it is unreachable.
    pub proxy_for: BTreeMap<String, String>,
    /// A proxy this router reconnects to, to collect traffic held for it.
    pub proxy: Option<String>,
    /// Per-queue bound; overflow drops the oldest frame.
    pub queue_bound: usize,
    /// How long a frame for an unreachable peer is retried before it is
    /// dropped.
    pub forward_timeout: Duration,
    /// Outbound peer links idle this long are closed.
    pub idle_timeout: Duration,
}

impl RouterConfig {
    pub fn new(host: &str, listen: &str) -> RouterConfig {
        RouterConfig {
            host: host.into(),
            listen: listen.into(),
            peers: BTreeMap::new(),
            proxy_for: BTreeMap::new(),
            proxy: None,
            queue_bound: 1024,
            forward_timeout: Duration::from_secs(10),
            idle_timeout: Duration::from_secs(60),
        }
    }

    pub fn peer(mut self, host: &str, endpoint: &str) -> RouterConfig {
        self.peers.insert(host.into(), endpoint.into());
        self
    }

    pub fn proxy_for(mut self, host: &str, proxy: &str) -> RouterConfig {
        self.proxy_for.insert(host.into(), proxy.into());
        self
    }

    pub fn with_proxy(mut self, proxy: &str) -> RouterConfig {
        self.proxy = Some(proxy.into());
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.peers.contains_key(&self.host) {
            return Err(ConfigError::SelfPeer(self.host.clone()));
        }
        let proxies = self.proxy_for.iter().map(|(h, p)| (h.as_str(), p)).chain(self.proxy.iter().map(|p| ("self", p)));
        for (host, proxy) in proxies {
            if !self.peers.contains_key(proxy) {
                return Err(ConfigError::UnknownProxy { host: host.into(), proxy: proxy.clone() });
            }
        }
        if self.queue_bound == 0 {
            return Err(ConfigError::ZeroBound);
        }
        Ok(())
    }
}

/// Splits `label=value`.
pub fn parse_pair(s: &str) -> Result<(String, String), ConfigError> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() && !v.trim().is_empty() => Ok((k.trim().into(), v.trim().into())),
        _ => Err(ConfigError::BadPair(s.into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let ok = RouterConfig::new("a", "127.0.0.1:0").peer("b", "x:1").peer("p", "x:2").proxy_for("b", "p");
        assert_eq!(ok.validate(), Ok(()));
        let self_peer = RouterConfig::new("a", "127.0.0.1:0").peer("a", "x:1");
        assert!(matches!(self_peer.validate(), Err(ConfigError::SelfPeer(_))));
        let bad_proxy = RouterConfig::new("a", "127.0.0.1:0").peer("b", "x:1").proxy_for("b", "p");
        assert!(matches!(bad_proxy.validate(), Err(ConfigError::UnknownProxy { .. })));
        let own_proxy = RouterConfig::new("a", "127.0.0.1:0").with_proxy("p");
        assert!(own_proxy.validate().is_err());
    }

    #[test]
    fn pairs() {
        assert_eq!(parse_pair("b=127.0.0.1:7401"), Ok(("b".into(), "127.0.0.1:7401".into())));
        assert!(parse_pair("b=").is_err());
        assert!(parse_pair("b").is_err());
    }
}
