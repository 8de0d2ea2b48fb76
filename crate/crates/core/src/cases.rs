//! Built-in cases and case loading by path or alias.

use std::fs;
use std::path::Path;

use crate::case::{checksum, parse_case, Network};
use crate::Error;

/// IEEE 24-bus Reliability Test System in MATPOWER format.
pub const IEEE24_RTS: &str = include_str!("../cases/case24_ieee_rts.m");

/// Source text of a built-in case alias.
pub fn builtin(alias: &str) -> Option<&'static str> {
    match alias.to_ascii_lowercase().as_str() {
        "ieee24" | "ieee24_rts" | "case24_ieee_rts" => Some(IEEE24_RTS),
        _ => None,
    }
}

/// A parsed case with the checksum of the bytes it was read from.
#[derive(Debug, Clone)]
pub struct LoadedCase {
    /// Alias or path as given.
    pub source: String,
    pub checksum: String,
    pub network: Network,
}

impl LoadedCase {
    pub fn from_text(source: &str, text: &str) -> Result<Self, Error> {
        let network = parse_case(text).map_err(|e| Error::Case {
            source_name: source.to_string(),
            error: e,
        })?;
        Ok(LoadedCase {
            source: source.to_string(),
            checksum: checksum(text.as_bytes()),
            network,
        })
    }
}

pub fn ieee24() -> LoadedCase {
    LoadedCase::from_text("ieee24", IEEE24_RTS).expect("built-in case parses")
}

/// Resolves `arg` as an existing file first, then as a built-in alias.
pub fn load_case(arg: &str) -> Result<LoadedCase, Error> {
    let path = Path::new(arg);
    if path.exists() {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: arg.to_string(),
            message: e.to_string(),
        })?;
        return LoadedCase::from_text(arg, &text);
    }
    match builtin(arg) {
        Some(text) => LoadedCase::from_text(arg, text),
        None => Err(Error::Io {
            path: arg.to_string(),
            message: "no such file or built-in case".to_string(),
        }),
    }
}
