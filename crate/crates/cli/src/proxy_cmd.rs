use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use staggercast::policy::RuleSet;
use staggercast::ConfigError;
use staggercast_proxy::{HttpUpstream, Proxy, ProxyConfig, RequestLog, SystemClock};
use tokio::net::TcpListener;

use crate::error::CliError;

fn load(config: &Path, ruleset: &Path) -> Result<(ProxyConfig, RuleSet), ConfigError> {
    let read =
        |p: &Path| fs::read_to_string(p).map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", p.display())));
    let cfg = ProxyConfig::from_json(&read(config)?)?;
    let rules = RuleSet::from_json(&read(ruleset)?).map_err(|e| e.within("ruleset"))?;
    Ok((cfg, rules))
}

pub fn run(listen: &str, config: &Path, ruleset: &Path, timeout_ms: u64) -> Result<(), CliError> {
    let (cfg, rules) = load(config, ruleset)?;
    let log = match &cfg.request_log {
        Some(path) => RequestLog::file(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?,
        None => RequestLog::stdout(),
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let upstream = Arc::new(HttpUpstream::new(Duration::from_millis(timeout_ms)));
        let proxy = Arc::new(Proxy::new(cfg, rules, upstream, Arc::new(SystemClock), log)?);
        let listener = TcpListener::bind(listen).await.map_err(|e| CliError::runtime(format!("{listen}: {e}")))?;
        let addr = listener.local_addr()?;
        eprintln!("listening on {addr}");
        let _ = std::io::stderr().flush();

        #[cfg(unix)]
        {
            let (proxy, config, ruleset) = (proxy.clone(), config.to_path_buf(), ruleset.to_path_buf());
            let mut hangup = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::hangup())?;
            tokio::spawn(async move {
                while hangup.recv().await.is_some() {
                    match load(&config, &ruleset).and_then(|(c, r)| proxy.reload(c, r)) {
                        Ok(()) => log::info!("configuration reloaded"),
                        Err(e) => log::error!("reload rejected, keeping previous configuration: {e}"),
                    }
                }
            });
        }

        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        };
        staggercast_proxy::serve(listener, proxy, shutdown).await?;
        Ok(())
    })
}
