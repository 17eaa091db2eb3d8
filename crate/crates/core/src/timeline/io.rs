use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EngagementHistory, EngagementVector, Observation, Post, SignalTimeline};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PostRecord {
    post_id: String,
    t0: i64,
    x: String,
    u: String,
    o: String,
    history: Vec<[i64; 5]>,
}

impl PostRecord {
    fn from_post(p: &Post) -> Self {
        Self {
            post_id: p.post_id.clone(),
            t0: p.t0,
            x: p.content_ref.clone(),
            u: p.user_ref.clone(),
            o: p.category.clone(),
            history: p
                .history()
                .observations()
                .iter()
                .map(|o| {
                    let c = o.counts.counts();
                    [o.t, c[0] as i64, c[1] as i64, c[2] as i64, c[3] as i64]
                })
                .collect(),
        }
    }

    fn into_post(self) -> Result<Post> {
        let mut obs = Vec::with_capacity(self.history.len());
        for row in self.history {
            if row[1..].iter().any(|&c| c < 0) {
                return Err(Error::Contract(format!("negative count in {row:?}")));
            }
            obs.push(Observation {
                t: row[0],
                counts: EngagementVector::new(row[1] as u64, row[2] as u64, row[3] as u64, row[4] as u64),
            });
        }
        Post::new(self.post_id, self.t0, self.x, self.u, self.o, EngagementHistory::new(obs)?)
    }
}

/// One JSON object per line: `post_id, t0, x, u, o, history`.
pub fn write_posts_jsonl(path: &Path, posts: &[Post]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in posts {
        serde_json::to_writer(&mut out, &PostRecord::from_post(p))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_posts_jsonl(path: &Path) -> Result<Vec<Post>> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    parse_posts(reader)
}

pub(crate) fn parse_posts(reader: impl BufRead) -> Result<Vec<Post>> {
    let mut posts = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let invalid = |msg: String| Error::Invalid { line: i + 1, msg };
        let rec: PostRecord = serde_json::from_str(&line).map_err(|e| invalid(e.to_string()))?;
        posts.push(rec.into_post().map_err(|e| invalid(e.to_string()))?);
    }
    Ok(posts)
}

/// Sidecar metadata for a signal CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalMeta {
    /// Grid spacing in seconds.
    pub grid_step: i64,
}

/// Write `t,g` rows to `csv_path` and the grid step to `meta_path`.
pub fn write_signal(csv_path: &Path, meta_path: &Path, signal: &SignalTimeline) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(["t", "g"])?;
    for (t, g) in signal.points() {
        w.write_record([t.to_string(), g.to_string()])?;
    }
    w.flush()?;
    let meta = SignalMeta {
        grid_step: signal.step(),
    };
    std::fs::write(meta_path, serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

pub fn read_signal(csv_path: &Path, meta_path: &Path) -> Result<SignalTimeline> {
    let meta: SignalMeta = serde_json::from_slice(&std::fs::read(meta_path)?)?;
    let rdr = csv::Reader::from_path(csv_path)?;
    parse_signal(rdr, &meta)
}

pub(crate) fn parse_signal<R: std::io::Read>(mut rdr: csv::Reader<R>, meta: &SignalMeta) -> Result<SignalTimeline> {
    if meta.grid_step <= 0 {
        return Err(Error::Config(format!("grid_step must be positive, got {}", meta.grid_step)));
    }
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "g" {
        return Err(Error::Invalid {
            line: 1,
            msg: format!("expected header `t,g`, got {headers:?}"),
        });
    }
    let mut start = None;
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let invalid = |msg: String| Error::Invalid { line, msg };
        let rec = rec.map_err(|e| invalid(e.to_string()))?;
        let t: i64 = rec[0].trim().parse().map_err(|e| invalid(format!("bad t: {e}")))?;
        let g: f64 = rec[1].trim().parse().map_err(|e| invalid(format!("bad g: {e}")))?;
        if !(0.0..=100.0).contains(&g) {
            return Err(invalid(format!("g={g} outside [0, 100]")));
        }
        let s = *start.get_or_insert(t);
        if t != s + values.len() as i64 * meta.grid_step {
            return Err(invalid(format!("t={t} is not on the {}s grid", meta.grid_step)));
        }
        values.push(g);
    }
    SignalTimeline::new(start.unwrap_or(0), meta.grid_step, values)
}
