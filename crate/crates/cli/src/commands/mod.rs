pub mod assemble;
pub mod assets;
pub mod evaluate;
pub mod phantom;
pub mod segment;
pub mod solve;
pub mod train;

use headfield_core::error::{Error, Result};
use headfield_core::volume::Axis;

pub(crate) fn parse_axis(s: &str) -> Result<Axis> {
    match s.to_ascii_lowercase().as_str() {
        "axial" => Ok(Axis::Axial),
        "sagittal" => Ok(Axis::Sagittal),
        "coronal" => Ok(Axis::Coronal),
        other => Err(Error::Validation(format!(
            "unknown axis '{other}' (expected axial, sagittal or coronal)"
        ))),
    }
}

pub(crate) fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<T>()
                .map_err(|_| Error::Validation(format!("bad {what} entry '{tok}' in '{s}'")))
        })
        .collect()
}

/// Serializes resolved clap args into the manifest config value.
pub(crate) fn config_value<T: serde::Serialize>(args: &T) -> Result<serde_json::Value> {
    serde_json::to_value(args).map_err(Error::Json)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing() {
        assert_eq!(parse_axis("Axial").unwrap(), Axis::Axial);
        assert_eq!(parse_axis("sagittal").unwrap(), Axis::Sagittal);
        assert!(parse_axis("oblique").is_err());
    }

    #[test]
    fn list_parsing() {
        assert_eq!(
            parse_list::<usize>("5,7, 7", "kernel").unwrap(),
            vec![5, 7, 7]
        );
        assert!(parse_list::<u8>("3,x", "label").is_err());
    }
}
