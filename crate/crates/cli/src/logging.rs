use std::io::Write;

use log::LevelFilter;
use serde_json::json;

/// Plain `level: message` lines, or one JSON object per line. Records with
/// target `metrics` carry a JSON object as their message and are passed
/// through unchanged in JSON mode.
pub fn init(json_logs: bool) {
    let mut b = env_logger::Builder::new();
    b.filter_level(LevelFilter::Info);
    if let Ok(spec) = std::env::var("RUST_LOG") {
        b.parse_filters(&spec);
    }
    b.target(env_logger::Target::Stderr);
    if json_logs {
        b.format(|f, r| {
            if r.target() == "metrics" {
                writeln!(f, "{}", r.args())
            } else {
                let line = json!({
                    "level": r.level().as_str(),
                    "target": r.target(),
                    "msg": r.args().to_string(),
                });
                writeln!(f, "{line}")
            }
        });
    } else {
        b.format(|f, r| writeln!(f, "{}: {}", r.level().as_str().to_lowercase(), r.args()));
    }
    let _ = b.try_init();
}
