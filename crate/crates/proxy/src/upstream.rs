use std::future::Future;
use std::pin::Pin;
use std::time::Duration;

use bytes::Bytes;
use http_body_util::{BodyExt, Full};
use hyper::{Request, Response};
use hyper_util::client::legacy::connect::HttpConnector;
use hyper_util::client::legacy::Client;
use hyper_util::rt::TokioExecutor;

#[derive(Debug, thiserror::Error)]
pub enum UpstreamError {
    #[error("upstream unreachable: {0}")]
    Unreachable(String),
    #[error("upstream did not answer within {0:?}")]
    Timeout(Duration),
}

pub type UpstreamFuture<'a> = Pin<Box<dyn Future<Output = Result<Response<Bytes>, UpstreamError>> + Send + 'a>>;

/// Where forwarded requests go. The request URI is absolute.
pub trait Upstream: Send + Sync {
    fn fetch(&self, request: Request<Bytes>) -> UpstreamFuture<'_>;
}

/// Plain HTTP/1 client with a whole-exchange timeout.
pub struct HttpUpstream {
    client: Client<HttpConnector, Full<Bytes>>,
    timeout: Duration,
}

impl HttpUpstream {
    pub fn new(timeout: Duration) -> Self {
        let mut connector = HttpConnector::new();
        connector.set_connect_timeout(Some(timeout));
        Self { client: Client::builder(TokioExecutor::new()).build(connector), timeout }
    }
}

impl Upstream for HttpUpstream {
    fn fetch(&self, request: Request<Bytes>) -> UpstreamFuture<'_> {
        Box::pin(async move {
            let exchange = async {
                let response = self
                    .client
                    .request(request.map(Full::new))
                    .await
                    .map_err(|e| UpstreamError::Unreachable(e.to_string()))?;
                let (parts, body) = response.into_parts();
                let body = body.collect().await.map_err(|e| UpstreamError::Unreachable(e.to_string()))?.to_bytes();
                Ok(Response::from_parts(parts, body))
            };
            tokio::time::timeout(self.timeout, exchange).await.map_err(|_| UpstreamError::Timeout(self.timeout))?
        })
    }
}
