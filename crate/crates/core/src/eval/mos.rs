use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MosChoice {
    A,
    B,
    Both,
    None,
}

impl std::str::FromStr for MosChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Self::A),
            "B" => Ok(Self::B),
            "BOTH" => Ok(Self::Both),
            "NONE" => Ok(Self::None),
            other => Err(arg_err!("unknown choice {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MosResponse {
    pub image_id: String,
    pub choice: MosChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JiPair {
    pub image_id: String,
    pub ji_a: f64,
    pub ji_b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MosGroup {
    ABetter,
    BBetter,
    All,
}

impl MosGroup {
    pub fn label(&self) -> &'static str {
        match self {
            Self::ABetter => "a_better",
            Self::BBetter => "b_better",
            Self::All => "all",
        }
    }

    fn contains(&self, p: &JiPair) -> bool {
        match self {
            Self::ABetter => p.ji_a > p.ji_b,
            Self::BBetter => p.ji_b > p.ji_a,
            Self::All => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosRow {
    pub group: MosGroup,
    /// Images in the group that received at least one response.
    pub n_images: usize,
    /// Percentages `[A, B, Both, None]`, `None` when no image has responses.
    pub pct: Option<[f64; 4]>,
    pub avg_ji_a: Option<f64>,
    pub avg_ji_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosTable {
    pub rows: Vec<MosRow>,
    /// `ji_b − ji_a` per image, in table order.
    pub deltas: Vec<(String, f64)>,
}

fn slot(c: MosChoice) -> usize {
    match c {
        MosChoice::A => 0,
        MosChoice::B => 1,
        MosChoice::Both => 2,
        MosChoice::None => 3,
    }
}

/// Per-image choice percentages averaged without weights over the images
/// of each group. Images with equal JI fall only into the `all` row.
pub fn mos_aggregate(responses: &[MosResponse], ji_table: &[JiPair]) -> Result<MosTable> {
    let mut counts: BTreeMap<&str, [u64; 4]> = BTreeMap::new();
    for r in responses {
        if !ji_table.iter().any(|p| p.image_id == r.image_id) {
            return Err(Error::Consistency(format!("response for unknown image {}", r.image_id)));
        }
        counts.entry(&r.image_id).or_default()[slot(r.choice)] += 1;
    }
    let rows = [MosGroup::ABetter, MosGroup::BBetter, MosGroup::All]
        .into_iter()
        .map(|group| {
            let members: Vec<&JiPair> = ji_table.iter().filter(|p| group.contains(p)).collect();
            let mut sum = [0.0f64; 4];
            let mut n_images = 0;
            for p in &members {
                if let Some(c) = counts.get(p.image_id.as_str()) {
                    let total: u64 = c.iter().sum();
                    for (s, &v) in sum.iter_mut().zip(c) {
                        *s += 100.0 * v as f64 / total as f64;
                    }
                    n_images += 1;
                }
            }
            let pct = (n_images > 0).then(|| sum.map(|s| s / n_images as f64));
            let avg = |f: fn(&JiPair) -> f64| {
                (!members.is_empty()).then(|| members.iter().map(|p| f(p)).sum::<f64>() / members.len() as f64)
            };
            MosRow {
                group,
                n_images,
                pct,
                avg_ji_a: avg(|p| p.ji_a),
                avg_ji_b: avg(|p| p.ji_b),
            }
        })
        .collect();
    let deltas = ji_table.iter().map(|p| (p.image_id.clone(), p.ji_b - p.ji_a)).collect();
    Ok(MosTable { rows, deltas })
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split(',').map(str::trim).collect::<Vec<_>>()))
        .filter(|(_, f)| !(f.len() == 1 && f[0].is_empty()))
        .filter(|(_, f)| f[0] != "image_id")
}

/// `image_id,choice` lines; a header line is optional.
pub fn parse_responses_csv(text: &str) -> Result<Vec<MosResponse>> {
    data_lines(text)
        .map(|(i, f)| {
            if f.len() != 2 {
                return Err(arg_err!("responses line {i}: expected 2 fields"));
            }
            Ok(MosResponse {
                image_id: f[0].to_string(),
                choice: f[1].parse().map_err(|e| arg_err!("responses line {i}: {e}"))?,
            })
        })
        .collect()
}

/// `image_id,ji_a,ji_b` lines; a header line is optional.
pub fn parse_ji_csv(text: &str) -> Result<Vec<JiPair>> {
    data_lines(text)
        .map(|(i, f)| {
            if f.len() != 3 {
                return Err(arg_err!("JI table line {i}: expected 3 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| arg_err!("JI table line {i}: bad number {s:?}"));
            Ok(JiPair {
                image_id: f[0].to_string(),
                ji_a: num(f[1])?,
                ji_b: num(f[2])?,
            })
        })
        .collect()
}

pub fn mos_table_csv(t: &MosTable) -> String {
    let opt = |v: Option<f64>, digits: usize| v.map(|x| format!("{x:.digits$}")).unwrap_or_default();
    let mut out = String::from("group,n_images,pct_a,pct_b,pct_both,pct_none,avg_ji_a,avg_ji_b\n");
    for r in &t.rows {
        let pct: Vec<String> = (0..4).map(|i| opt(r.pct.map(|p| p[i]), 2)).collect();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.group.label(),
            r.n_images,
            pct.join(","),
            opt(r.avg_ji_a, 4),
            opt(r.avg_ji_b, 4)
        ));
    }
    out
}
