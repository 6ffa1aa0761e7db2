use std::path::Path;
use std::time::Duration;

use anyhow::{anyhow, Context};
use firewatch_sim::SimTrace;
use reqwest::StatusCode;
use serde::Serialize;

#[derive(Debug, Clone, Copy)]
pub enum Pacing {
    /// Post back to back.
    Fast,
    /// Keep the trace's relative timing, divided by this factor.
    Scaled(f64),
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize)]
pub struct ReplaySummary {
    pub posted: usize,
    pub accepted: usize,
    pub duplicates: usize,
    pub rejected: usize,
}

/// Posts every originated envelope of the trace to `service`, in trace
/// order, one at a time.
pub async fn replay(
    trace: &Path,
    service: &str,
    token: &str,
    pacing: Pacing,
) -> anyhow::Result<ReplaySummary> {
    let trace = SimTrace::load(trace).map_err(|e| anyhow!(e))?;
    let envelopes = trace
        .envelopes()
        .context("trace holds an envelope that is not base64")?;
    let url = format!("{}/packages", service.trim_end_matches('/'));
    let client = reqwest::Client::new();
    let start = tokio::time::Instant::now();
    let t0 = envelopes.first().map_or(0, |e| e.2);
    let mut summary = ReplaySummary::default();
    for (package, bytes, t_ms) in envelopes {
        if let Pacing::Scaled(factor) = pacing {
            let offset = Duration::from_secs_f64((t_ms - t0) as f64 / 1000.0 / factor);
            tokio::time::sleep_until(start + offset).await;
        }
        let resp = client
            .post(&url)
            .bearer_auth(token)
            .header("content-type", "application/octet-stream")
            .body(bytes)
            .send()
            .await
            .with_context(|| format!("posting package {package} to {url}"))?;
        summary.posted += 1;
        let status = resp.status();
        match status {
            StatusCode::CREATED => summary.accepted += 1,
            StatusCode::OK => summary.duplicates += 1,
            _ => {
                let body = resp.text().await.unwrap_or_default();
                let code = serde_json::from_str::<serde_json::Value>(&body)
                    .ok()
                    .and_then(|v| v["code"].as_str().map(str::to_owned))
                    .unwrap_or_default();
                if matches!(
                    code.as_str(),
                    "unauthorized" | "token-expired" | "forbidden"
                ) || status.is_server_error()
                {
                    return Err(anyhow!(
                        "service stopped the replay at package {package}: {status} {body}"
                    ));
                }
                eprintln!("rejected {package}: {status} {body}");
                summary.rejected += 1;
            }
        }
    }
    Ok(summary)
}
