use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::naming::{ClipMetadata, Domain, Split};
use crate::error::{Error, Result};

/// Classification target: machine type, domain and the attribute tuple as
/// written in the file name. Attribute-free machines have an empty tuple.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttributeKey {
    pub machine_type: String,
    pub domain: Domain,
    pub attributes: Vec<(String, String)>,
}

impl AttributeKey {
    pub fn of(meta: &ClipMetadata) -> Self {
        AttributeKey {
            machine_type: meta.machine_type.clone(),
            domain: meta.domain,
            attributes: meta.attributes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeClassMap {
    classes: BTreeMap<AttributeKey, usize>,
}

impl AttributeClassMap {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class_of(&self, meta: &ClipMetadata) -> Option<usize> {
        self.classes.get(&AttributeKey::of(meta)).copied()
    }

    pub fn get(&self, key: &AttributeKey) -> Option<usize> {
        self.classes.get(key).copied()
    }

    /// Keys in class-index order.
    pub fn iter(&self) -> impl Iterator<Item = (&AttributeKey, usize)> {
        self.classes.iter().map(|(k, &v)| (k, v))
    }
}

/// Assigns one class per distinct (machine, domain, attributes) key, indexed
/// in lexicographic key order.
pub fn build_attribute_classes(metadata: &[ClipMetadata]) -> Result<AttributeClassMap> {
    if metadata.is_empty() {
        return Err(Error::EmptyInput("no clips to build attribute classes from"));
    }
    if let Some(m) = metadata.iter().find(|m| m.split != Split::Train) {
        return Err(Error::InvalidParam(format!(
            "attribute classes are built from train clips only, got {}",
            m.clip_id
        )));
    }
    let keys: BTreeSet<AttributeKey> = metadata.iter().map(AttributeKey::of).collect();
    let classes = keys.into_iter().enumerate().map(|(i, k)| (k, i)).collect();
    Ok(AttributeClassMap { classes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::naming::parse_clip_name;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn meta(path: &str) -> ClipMetadata {
        parse_clip_name(path).unwrap()
    }

    #[test]
    fn single_key_single_class() {
        let m = vec![
            meta("ToyCar/train/section_00_source_train_normal_0001_car_A1.wav"),
            meta("ToyCar/train/section_00_source_train_normal_0002_car_A1.wav"),
        ];
        assert_eq!(build_attribute_classes(&m).unwrap().len(), 1);
    }

    #[test]
    fn domains_times_values() {
        let m = vec![
            meta("ToyCar/train/section_00_source_train_normal_0001_car_A1.wav"),
            meta("ToyCar/train/section_00_source_train_normal_0002_car_A2.wav"),
            meta("ToyCar/train/section_00_target_train_normal_0003_car_A1.wav"),
            meta("ToyCar/train/section_00_target_train_normal_0004_car_A2.wav"),
        ];
        let map = build_attribute_classes(&m).unwrap();
        assert_eq!(map.len(), 4);
        let idx: Vec<usize> = map.iter().map(|(_, i)| i).collect();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn attribute_free_machines_keyed_by_domain() {
        let m = vec![
            meta("fan/train/section_00_source_train_normal_0001.wav"),
            meta("fan/train/section_00_target_train_normal_0002.wav"),
            meta("fan/train/section_00_target_train_normal_0003.wav"),
        ];
        let map = build_attribute_classes(&m).unwrap();
        assert_eq!(map.len(), 2);
        assert_eq!(map.class_of(&m[1]), map.class_of(&m[2]));
    }

    #[test]
    fn empty_and_test_split_rejected() {
        assert!(matches!(build_attribute_classes(&[]), Err(Error::EmptyInput(_))));
        let m = vec![meta("fan/test/section_00_source_test_normal_0001.wav")];
        assert!(build_attribute_classes(&m).is_err());
    }

    proptest! {
        #[test]
        fn count_matches_distinct_tuples_and_is_order_insensitive(
            specs in prop::collection::vec((0usize..3, any::<bool>(), 0usize..3, 0usize..2), 1..60),
            seed in any::<u64>(),
        ) {
            let machines = ["fan", "ToyCar", "valve"];
            let metas: Vec<ClipMetadata> = specs.iter().enumerate().map(|(i, &(m, tgt, a, b))| {
                let dom = if tgt { "target" } else { "source" };
                let attrs = if m == 0 { String::new() } else { format!("_car_A{a}_mic_{b}") };
                meta(&format!("{}/train/section_00_{dom}_train_normal_{i:04}{attrs}.wav", machines[m]))
            }).collect();

            // brute-force distinct count
            let distinct: HashSet<(String, Domain, Vec<(String, String)>)> = metas
                .iter()
                .map(|m| (m.machine_type.clone(), m.domain, m.attributes.clone()))
                .collect();
            let map = build_attribute_classes(&metas).unwrap();
            prop_assert_eq!(map.len(), distinct.len());

            let mut indices: Vec<usize> = map.iter().map(|(_, i)| i).collect();
            indices.sort_unstable();
            prop_assert_eq!(indices, (0..distinct.len()).collect::<Vec<_>>());

            let mut shuffled = metas.clone();
            let n = shuffled.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(build_attribute_classes(&shuffled).unwrap(), map);
        }
    }
}
