//! DCASE 2024 clip naming:
//! `<machine>/<split>/section_<NN>_<domain>_<split>_<condition>_<index>[_<key>_<value>]*.wav`

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    Normal,
    Anomaly,
    Unknown,
}

macro_rules! token_enum {
    ($ty:ident { $($variant:ident => $tok:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => $tok),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $ty {
            type Err = ();
            fn from_str(s: &str) -> std::result::Result<Self, ()> {
                match s { $($tok => Ok($ty::$variant),)+ _ => Err(()) }
            }
        }
    };
}

token_enum!(Split { Train => "train", Test => "test" });
token_enum!(Domain { Source => "source", Target => "target" });
token_enum!(Condition { Normal => "normal", Anomaly => "anomaly", Unknown => "unknown" });

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClipMetadata {
    pub machine_type: String,
    pub section: u8,
    pub split: Split,
    pub domain: Domain,
    pub condition: Condition,
    /// Clip number exactly as written in the file name (leading zeros kept).
    pub index: String,
    /// Attribute pairs in file-name order.
    pub attributes: Vec<(String, String)>,
    /// `<machine>/<split>/<file name>`.
    pub clip_id: String,
}

impl ClipMetadata {
    pub fn file_name(&self) -> String {
        let mut name = format!(
            "section_{:02}_{}_{}_{}_{}",
            self.section, self.domain, self.split, self.condition, self.index
        );
        for (k, v) in &self.attributes {
            name.push('_');
            name.push_str(k);
            name.push('_');
            name.push_str(v);
        }
        name.push_str(".wav");
        name
    }

    /// Renders the relative path this metadata parses from.
    pub fn format_path(&self) -> String {
        format!("{}/{}/{}", self.machine_type, self.split, self.file_name())
    }
}

fn bad(path: &str, component: impl Into<String>) -> Error {
    Error::ClipName {
        path: path.to_string(),
        component: component.into(),
    }
}

fn is_token(s: &str) -> bool {
    !s.is_empty() && !s.contains('/')
}

/// Parses a clip path. Only the last three path components are used, so
/// absolute paths under a corpus root are accepted.
pub fn parse_clip_name(path: &str) -> Result<ClipMetadata> {
    let normalized = path.replace('\\', "/");
    let parts: Vec<&str> = normalized.split('/').filter(|p| !p.is_empty()).collect();
    if parts.len() < 3 {
        return Err(bad(path, "path (expected <machine>/<split>/<file>.wav)"));
    }
    let [machine, split_dir, file] = [parts[parts.len() - 3], parts[parts.len() - 2], parts[parts.len() - 1]];
    if !is_token(machine) {
        return Err(bad(path, "machine type"));
    }
    let split: Split = split_dir
        .parse()
        .map_err(|_| bad(path, format!("split directory {split_dir:?}")))?;
    let stem = file
        .strip_suffix(".wav")
        .ok_or_else(|| bad(path, format!("extension of {file:?}")))?;

    let tokens: Vec<&str> = stem.split('_').collect();
    if tokens.len() < 6 {
        return Err(bad(path, "file name (too few fields)"));
    }
    if tokens[0] != "section" {
        return Err(bad(path, format!("section prefix {:?}", tokens[0])));
    }
    let section_tok = tokens[1];
    if section_tok.len() != 2 || !section_tok.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad(path, format!("section number {section_tok:?}")));
    }
    let section: u8 = section_tok.parse().map_err(|_| bad(path, "section number"))?;
    let domain: Domain = tokens[2]
        .parse()
        .map_err(|_| bad(path, format!("domain {:?}", tokens[2])))?;
    let name_split: Split = tokens[3]
        .parse()
        .map_err(|_| bad(path, format!("split {:?}", tokens[3])))?;
    if name_split != split {
        return Err(bad(
            path,
            format!("split {:?} (directory says {split_dir:?})", tokens[3]),
        ));
    }
    let condition: Condition = tokens[4]
        .parse()
        .map_err(|_| bad(path, format!("condition {:?}", tokens[4])))?;
    let index = tokens[5];
    if index.is_empty() || !index.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad(path, format!("clip index {index:?}")));
    }
    let rest = &tokens[6..];
    if rest.len() % 2 != 0 {
        return Err(bad(
            path,
            format!("attribute list (key {:?} has no value)", rest[rest.len() - 1]),
        ));
    }
    let mut attributes = Vec::with_capacity(rest.len() / 2);
    for pair in rest.chunks(2) {
        if pair[0].is_empty() || pair[1].is_empty() {
            return Err(bad(path, "attribute (empty key or value)"));
        }
        attributes.push((pair[0].to_string(), pair[1].to_string()));
    }

    Ok(ClipMetadata {
        machine_type: machine.to_string(),
        section,
        split,
        domain,
        condition,
        index: index.to_string(),
        attributes,
        clip_id: format!("{machine}/{split_dir}/{file}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn toycar_attributes_in_file_order() {
        let m = parse_clip_name("ToyCar/train/section_00_source_train_normal_0001_car_A1_spd_28V_mic_1.wav").unwrap();
        assert_eq!(m.machine_type, "ToyCar");
        assert_eq!(m.section, 0);
        assert_eq!(m.split, Split::Train);
        assert_eq!(m.domain, Domain::Source);
        assert_eq!(m.condition, Condition::Normal);
        assert_eq!(
            m.attributes,
            vec![
                ("car".to_string(), "A1".to_string()),
                ("spd".to_string(), "28V".to_string()),
                ("mic".to_string(), "1".to_string())
            ]
        );
    }

    #[test]
    fn attribute_free_machine() {
        let m = parse_clip_name("fan/train/section_00_target_train_normal_0002.wav").unwrap();
        assert_eq!(m.domain, Domain::Target);
        assert!(m.attributes.is_empty());
        assert_eq!(m.clip_id, "fan/train/section_00_target_train_normal_0002.wav");
    }

    #[test]
    fn root_prefix_is_ignored() {
        let m = parse_clip_name("/data/dev/fan/test/section_01_source_test_anomaly_0003.wav").unwrap();
        assert_eq!(m.clip_id, "fan/test/section_01_source_test_anomaly_0003.wav");
        assert_eq!(m.section, 1);
        assert_eq!(m.condition, Condition::Anomaly);
    }

    #[test]
    fn errors_name_the_component() {
        let cases = [
            ("fan/train/section_00_middle_train_normal_0001.wav", "domain"),
            ("fan/test/section_00_source_train_normal_0001.wav", "split"),
            ("fan/train/section_0_source_train_normal_0001.wav", "section number"),
            ("fan/train/section_00_source_train_broken_0001.wav", "condition"),
            ("fan/train/section_00_source_train_normal_0001_car.wav", "attribute"),
            ("fan/train/section_00_source_train_normal_0001.flac", "extension"),
            ("fan/valid/section_00_source_train_normal_0001.wav", "split directory"),
            ("section_00_source_train_normal_0001.wav", "path"),
        ];
        for (path, what) in cases {
            match parse_clip_name(path) {
                Err(Error::ClipName { component, .. }) => {
                    assert!(component.contains(what), "{path}: {component}")
                }
                other => panic!("{path}: {other:?}"),
            }
        }
    }

    fn arb_token() -> impl Strategy<Value = String> {
        "[A-Za-z0-9-]{1,6}"
    }

    prop_compose! {
        fn arb_meta()(
            machine in "[A-Za-z][A-Za-z0-9]{0,10}",
            section in 0u8..100,
            split in prop_oneof![Just(Split::Train), Just(Split::Test)],
            domain in prop_oneof![Just(Domain::Source), Just(Domain::Target)],
            condition in prop_oneof![Just(Condition::Normal), Just(Condition::Anomaly), Just(Condition::Unknown)],
            index in "[0-9]{4}",
            attributes in prop::collection::vec((arb_token(), arb_token()), 0..4),
        ) -> ClipMetadata {
            let mut m = ClipMetadata {
                machine_type: machine, section, split, domain, condition, index, attributes,
                clip_id: String::new(),
            };
            m.clip_id = m.format_path();
            m
        }
    }

    proptest! {
        #[test]
        fn parse_inverts_format(meta in arb_meta()) {
            let parsed = parse_clip_name(&meta.format_path()).unwrap();
            prop_assert_eq!(parsed, meta);
        }
    }
}
