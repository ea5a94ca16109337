//! Seeded generator for a synthetic alignment benchmark.
//!
//! The left graph mixes relations of very different inverse functionality
//! (one-to-one links next to hub relations such as birthplaces) and
//! attributes ranging from unique identifiers to a handful of genres. The
//! right graph is a noisy copy: its own relation and attribute vocabulary,
//! literal formatting that only agrees after normalization, a share of
//! entities renamed to opaque identifiers and a share of triples dropped.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kg::{parse_kg, KnowledgeGraph, Side};
use crate::metrics::ReferenceAlignment;

pub const LEFT_REL_FILE: &str = "rel_triples_1";
pub const LEFT_ATTR_FILE: &str = "attr_triples_1";
pub const RIGHT_REL_FILE: &str = "rel_triples_2";
pub const RIGHT_ATTR_FILE: &str = "attr_triples_2";
pub const REFERENCE_FILE: &str = "ent_links";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub num_entities: usize,
    pub num_rel_triples: usize,
    pub num_attr_triples: usize,
    /// Share of right-side entities whose identifier no longer matches.
    pub rename_fraction: f64,
    /// Share of triples missing from the right graph.
    pub drop_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 7,
            num_entities: 1000,
            num_rel_triples: 3000,
            num_attr_triples: 1500,
            rename_fraction: 0.6,
            drop_fraction: 0.2,
        }
    }
}

/// The five TSV files of a benchmark, in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticBenchmark {
    pub left_rel: String,
    pub left_attr: String,
    pub right_rel: String,
    pub right_attr: String,
    pub reference: String,
}

#[derive(Clone, Copy)]
enum Tails {
    Any,
    /// Tails drawn from this share of the entities; at most one tail per
    /// head.
    Pool(f64),
}

const RELATIONS: &[(&str, &str, Tails)] = &[
    ("spouse", "marriedTo", Tails::Any),
    ("knows", "acquaintedWith", Tails::Any),
    ("influencedBy", "hasInfluence", Tails::Any),
    ("worksFor", "employer", Tails::Pool(0.10)),
    ("memberOf", "belongsTo", Tails::Pool(0.10)),
    ("partOf", "componentOf", Tails::Pool(0.20)),
    ("locatedIn", "place", Tails::Pool(0.03)),
    ("bornIn", "birthPlace", Tails::Pool(0.03)),
];

#[derive(Clone, Copy)]
enum Literal {
    Code,
    Date,
    Genre,
    Number,
    Phrase,
}

const ATTRIBUTES: &[(&str, &str, Literal)] = &[
    ("code", "identifier", Literal::Code),
    ("birthDate", "dateOfBirth", Literal::Date),
    ("genre", "category", Literal::Genre),
    ("population", "inhabitants", Literal::Number),
    ("motto", "slogan", Literal::Phrase),
];

const GENRES: &[&str] = &[
    "jazz", "rock", "opera", "folk", "blues", "techno", "ambient", "punk", "soul", "reggae", "gospel", "ska",
    "disco", "grime", "salsa",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "re", "nu", "sa", "to", "vi", "da", "fe", "go", "hu", "ja", "ke", "li", "mo", "na", "pe",
    "qui", "ro", "su", "ta", "ve", "wa", "xi", "yo", "ze", "bra", "cle", "dro", "fri", "glo", "pla", "stu",
];

fn word(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut w: String = (0..syllables).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
    if let Some(first) = w.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    w
}

impl SyntheticBenchmark {
    pub fn generate(config: &SyntheticConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = config.num_entities.max(2);

        let mut used = HashSet::new();
        let names: Vec<String> = (0..n)
            .map(|_| loop {
                let syl = rng.random_range(2..=3);
                let syl2 = rng.random_range(2..=3);
                let candidate = format!("{}_{}", word(&mut rng, syl), word(&mut rng, syl2));
                if used.insert(candidate.clone()) {
                    break candidate;
                }
            })
            .collect();
        let left_name = |i: usize| format!("http://kg1.example.org/resource/{}", names[i]);

        let mut used_ids = HashSet::new();
        let right_names: Vec<String> = (0..n)
            .map(|i| {
                if rng.random_bool(config.rename_fraction.clamp(0.0, 1.0)) {
                    let id = loop {
                        let id = rng.random_range(1_000_000u32..10_000_000);
                        if used_ids.insert(id) {
                            break id;
                        }
                    };
                    format!("http://kg2.example.org/entity/Q{id}")
                } else {
                    format!("http://kg2.example.org/resource/{}", names[i])
                }
            })
            .collect();

        // Relation triples over entity indices.
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut rel_set = BTreeSet::new();
        let mut functional_heads = HashSet::new();
        let mut rel_triples = Vec::new();
        let max_rel = config.num_rel_triples.min(n * (n - 1) * RELATIONS.len() / 4);
        while rel_triples.len() < max_rel {
            let r = rng.random_range(0..RELATIONS.len());
            let h = rng.random_range(0..n);
            let t = match RELATIONS[r].2 {
                Tails::Any => rng.random_range(0..n),
                Tails::Pool(share) => {
                    if functional_heads.contains(&(h, r)) {
                        continue;
                    }
                    let size = ((n as f64 * share).ceil() as usize).clamp(1, n);
                    order[rng.random_range(0..size)]
                }
            };
            if h != t && rel_set.insert((h, r, t)) {
                if matches!(RELATIONS[r].2, Tails::Pool(_)) {
                    functional_heads.insert((h, r));
                }
                rel_triples.push((h, r, t));
            }
        }

        // Attribute triples, at most one per (entity, attribute).
        let mut attr_set = BTreeSet::new();
        let mut attr_triples = Vec::new();
        let max_attr = config.num_attr_triples.min(n * ATTRIBUTES.len());
        while attr_triples.len() < max_attr {
            let e = rng.random_range(0..n);
            let a = rng.random_range(0..ATTRIBUTES.len());
            if attr_set.insert((e, a)) {
                let value = match ATTRIBUTES[a].2 {
                    Literal::Code => format!("ID-{:06}", e * 7919 % 1_000_003),
                    Literal::Date => format!(
                        "{}-{:02}-{:02}",
                        rng.random_range(1900..2000),
                        rng.random_range(1..=12),
                        rng.random_range(1..=28)
                    ),
                    Literal::Genre => GENRES.choose(&mut rng).unwrap().to_string(),
                    Literal::Number => rng.random_range(1_000..2_000_000).to_string(),
                    Literal::Phrase => {
                        let a = rng.random_range(1..=2);
                        let b = rng.random_range(2..=3);
                        format!("{} {} {}", word(&mut rng, a), word(&mut rng, b), word(&mut rng, 2))
                    }
                };
                attr_triples.push((e, a, value));
            }
        }

        let mut left_rel = String::new();
        for &(h, r, t) in &rel_triples {
            left_rel.push_str(&format!("{}\t{}\t{}\n", left_name(h), RELATIONS[r].0, left_name(t)));
        }
        let mut left_attr = String::new();
        for (e, a, v) in &attr_triples {
            let written = match ATTRIBUTES[*a].2 {
                Literal::Date => format!("\"{v}\"^^xsd:date"),
                Literal::Genre => v.clone(),
                _ => format!("\"{v}\""),
            };
            left_attr.push_str(&format!("{}\t{}\t{}\n", left_name(*e), ATTRIBUTES[*a].0, written));
        }

        let drop = config.drop_fraction.clamp(0.0, 1.0);
        let mut present_right = vec![false; n];
        let mut right_rel = String::new();
        for &(h, r, t) in &rel_triples {
            if !rng.random_bool(drop) {
                present_right[h] = true;
                present_right[t] = true;
                right_rel.push_str(&format!("{}\t{}\t{}\n", right_names[h], RELATIONS[r].1, right_names[t]));
            }
        }
        let mut right_attr = String::new();
        for (e, a, v) in &attr_triples {
            if !rng.random_bool(drop) {
                present_right[*e] = true;
                let written = match ATTRIBUTES[*a].2 {
                    Literal::Genre => v.to_uppercase(),
                    Literal::Phrase => format!("  {}  ", v.replace(' ', "   ")),
                    Literal::Date => format!("{v}^^<http://www.w3.org/2001/XMLSchema#date>"),
                    _ => v.clone(),
                };
                right_attr.push_str(&format!("{}\t{}\t{}\n", right_names[*e], ATTRIBUTES[*a].1, written));
            }
        }

        let mut present_left = vec![false; n];
        for &(h, _, t) in &rel_triples {
            present_left[h] = true;
            present_left[t] = true;
        }
        for (e, _, _) in &attr_triples {
            present_left[*e] = true;
        }
        let mut reference = String::new();
        for i in 0..n {
            if present_left[i] && present_right[i] {
                reference.push_str(&format!("{}\t{}\n", left_name(i), right_names[i]));
            }
        }

        SyntheticBenchmark { left_rel, left_attr, right_rel, right_attr, reference }
    }

    pub fn graphs(&self) -> Result<(KnowledgeGraph, KnowledgeGraph, ReferenceAlignment)> {
        Ok((
            parse_kg(self.left_rel.as_bytes(), self.left_attr.as_bytes(), Side::Left)?,
            parse_kg(self.right_rel.as_bytes(), self.right_attr.as_bytes(), Side::Right)?,
            ReferenceAlignment::parse(self.reference.as_bytes())?,
        ))
    }

    /// Writes the five files into `dir`, creating it if needed.
    pub fn write_to_dir(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(LEFT_REL_FILE), &self.left_rel)?;
        fs::write(dir.join(LEFT_ATTR_FILE), &self.left_attr)?;
        fs::write(dir.join(RIGHT_REL_FILE), &self.right_rel)?;
        fs::write(dir.join(RIGHT_ATTR_FILE), &self.right_attr)?;
        fs::write(dir.join(REFERENCE_FILE), &self.reference)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_determinism() {
        let cfg = SyntheticConfig::default();
        let a = SyntheticBenchmark::generate(&cfg);
        assert_eq!(a, SyntheticBenchmark::generate(&cfg));
        let (l, r, gold) = a.graphs().unwrap();
        let s = l.stats();
        assert_eq!(s.num_rel_triples, 3000);
        assert_eq!(s.num_attr_triples, 1500);
        assert!(s.num_entities > 950 && s.num_entities <= 1000, "{s:?}");
        let rs = r.stats();
        assert!((2200..=2600).contains(&rs.num_rel_triples), "{rs:?}");
        assert!(gold.len() > 900);
        // Roughly 40% of gold pairs keep a matching label.
        let same = gold
            .iter()
            .filter(|(a, b)| {
                crate::kg::label_from_identifier(a) == crate::kg::label_from_identifier(b)
            })
            .count();
        let share = same as f64 / gold.len() as f64;
        assert!((0.33..0.47).contains(&share), "{share}");
        assert_ne!(a, SyntheticBenchmark::generate(&SyntheticConfig { seed: 8, ..cfg }));
    }
}
