//! Intercepting HTTP proxy for demand-side management.
//!
//! Requests to managed domains are matched against a rule set. A rule can
//! put a staging page in front of the download, rewrite an HTML listing so
//! cached items come first, or redirect to a cache. Everything else passes
//! through untouched.
//!
//! Control endpoints:
//!
//! * `GET /staggercast/offer/{token}`: the pending offer, as JSON when the
//!   client accepts it, otherwise as the staging page.
//! * `POST /staggercast/choice`: `{token, choice, new_access_s?,
//!   alternative_content_id?}` as JSON or as a form. `choice` is one of
//!   `continue`, `delay`, `shift_content`.
//! * `GET /staggercast/ui/{file}`: the optional script bundle.

pub mod bypass;
pub mod clock;
pub mod config;
pub mod log;
pub mod pages;
mod proxy;
pub mod server;
pub mod session;
pub mod upstream;

pub use clock::{Clock, ManualClock, SystemClock};
pub use config::{CacheConfig, CatalogEntry, DomainEntry, ManagedDomainTable, ProxyConfig, Subscriber};
pub use log::{LogRecord, RequestLog};
pub use proxy::{PrefetchJob, Proxy, Snapshot, USER_HEADER};
pub use server::serve;
pub use upstream::{HttpUpstream, Upstream, UpstreamError, UpstreamFuture};
