//! Episode files (JSON Lines) and CSV reports.
//!
//! Floats go through serde_json's shortest round-trip formatting and Rust's
//! `Display` for f64, both of which reproduce the exact binary value on read.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::Episode;
use crate::error::{Error, Result};
use crate::metrics::{CorrelationTable, MetricsRow, NdrtMeans};
use crate::SCHEMA_VERSION;

#[derive(Serialize)]
struct EpisodeLine<'a> {
    schema: &'a str,
    #[serde(flatten)]
    episode: &'a Episode,
}

pub fn write_episodes<W: Write>(mut w: W, episodes: &[Episode]) -> Result<()> {
    for ep in episodes {
        let line = EpisodeLine {
            schema: SCHEMA_VERSION,
            episode: ep,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io("<episodes>", e))?;
    }
    Ok(())
}

/// Parses and validates every line; blank lines are skipped.
pub fn read_episodes<R: BufRead>(r: R) -> Result<Vec<Episode>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let lineno = i as u64 + 1;
        let line = line.map_err(|e| Error::io("<episodes>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed { line: lineno, message };
        let mut value: serde_json::Value = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| malformed("expected a JSON object".into()))?;
        match obj.remove("schema") {
            Some(serde_json::Value::String(s)) if s == SCHEMA_VERSION => {}
            Some(other) => return Err(malformed(format!("unsupported schema {other}"))),
            None => return Err(malformed("missing schema field".into())),
        }
        let ep: Episode = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        ep.validate().map_err(|e| malformed(e.to_string()))?;
        out.push(ep);
    }
    Ok(out)
}

pub fn save_episodes(path: &Path, episodes: &[Episode]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_episodes(&mut w, episodes)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_episodes(path: &Path) -> Result<Vec<Episode>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_episodes(BufReader::new(file))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics_csv<W: Write>(w: W, rows: &[MetricsRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["episode_id", "ndrt", "delta_v_mps", "delta_x_m", "ori_pre", "tot_s"])?;
    for r in rows {
        csv.write_record([
            r.episode_id.clone(),
            r.ndrt.to_string(),
            r.delta_v_mps.to_string(),
            r.delta_x_m.to_string(),
            opt(r.ori_pre),
            opt(r.tot_s),
        ])?;
    }
    csv.flush().map_err(|e| Error::io("<metrics>", e))
}

pub fn read_metrics_csv<R: Read>(r: R) -> Result<Vec<MetricsRow>> {
    let mut csv = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in csv.deserialize::<MetricsRow>() {
        let row = rec.map_err(|e| Error::Malformed {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        if !(row.delta_v_mps.is_finite() && row.delta_x_m.is_finite()) {
            return Err(Error::NonFinite("metrics row"));
        }
        out.push(row);
    }
    Ok(out)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "undefined".into())
}

/// Two-by-two table: rows ORI and TOT, columns delta_v and delta_x.
pub fn write_correlation_csv<W: Write>(w: W, table: &CorrelationTable) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["", "delta_v", "delta_x"])?;
    let [ori, tot] = table.cells();
    csv.write_record(["ORI".to_string(), cell(ori[0]), cell(ori[1])])?;
    csv.write_record(["TOT".to_string(), cell(tot[0]), cell(tot[1])])?;
    csv.flush().map_err(|e| Error::io("<correlation>", e))
}

pub fn write_ndrt_means_csv<W: Write>(w: W, means: &[NdrtMeans]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["ndrt", "count", "mean_delta_v_mps", "mean_delta_x_m"])?;
    for m in means {
        csv.write_record([
            m.ndrt.to_string(),
            m.count.to_string(),
            m.mean_delta_v_mps.to_string(),
            m.mean_delta_x_m.to_string(),
        ])?;
    }
    csv.flush().map_err(|e| Error::io("<ndrt means>", e))
}

/// Written next to each output as `<output>.manifest.json`. Holds the exact
/// argument list, so a run can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub schema_version: String,
}

impl RunManifest {
    pub fn path_for(output: &Path) -> std::path::PathBuf {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        output.with_file_name(name)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Writes a text file, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{EgoSample, FrameFeatures, Ndrt};

    fn episode(id: &str) -> Episode {
        let fr = 2.0;
        Episode {
            id: id.into(),
            subject_id: "S01".into(),
            ndrt: Ndrt::new("Texting"),
            frame_rate_hz: fr,
            features: vec![FrameFeatures::uniform(); 60],
            ego: (0..=30)
                .map(|i| EgoSample {
                    t: i as f64,
                    speed: 13.0 + 0.1 / 3.0 * i as f64,
                    lateral_offset: 0.1,
                })
                .collect(),
            t_tor: 12.345678901234,
            tot: Some(2.0 / 3.0),
            rater_sheets: None,
            latent_readiness: None,
        }
    }

    #[test]
    fn episodes_round_trip_exactly() {
        let eps = vec![episode("a"), episode("b")];
        let mut buf = Vec::new();
        write_episodes(&mut buf, &eps).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("{\"schema\":\"readywatch_v1\""));
        assert_eq!(read_episodes(&buf[..]).unwrap(), eps);
    }

    #[test]
    fn schema_is_mandatory() {
        let mut buf = Vec::new();
        write_episodes(&mut buf, &[episode("a")]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let missing = text.replacen("\"schema\":\"readywatch_v1\",", "", 1);
        let err = read_episodes(missing.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 1, .. }), "{err}");
        let wrong = text.replacen("readywatch_v1", "readywatch_v0", 1);
        assert!(read_episodes(wrong.as_bytes()).is_err());
    }

    #[test]
    fn invalid_episode_reports_line() {
        let mut bad = episode("b");
        bad.t_tor = 99.0;
        let mut buf = Vec::new();
        write_episodes(&mut buf, &[episode("a"), bad]).unwrap();
        match read_episodes(&buf[..]).unwrap_err() {
            Error::Malformed { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn metrics_csv_round_trip() {
        let rows = vec![
            MetricsRow {
                episode_id: "a".into(),
                ndrt: Ndrt::new("Reading"),
                delta_v_mps: 0.1 + 0.2,
                delta_x_m: 1.0 / 3.0,
                ori_pre: Some(3.25),
                tot_s: None,
            },
            MetricsRow {
                episode_id: "b".into(),
                ndrt: Ndrt::new("Attentive"),
                delta_v_mps: 0.0,
                delta_x_m: 2.5e-7,
                ori_pre: None,
                tot_s: Some(1.5),
            },
        ];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("episode_id,ndrt,delta_v_mps,delta_x_m,ori_pre,tot_s\n"));
        assert_eq!(read_metrics_csv(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn correlation_csv_layout() {
        let table = CorrelationTable {
            n: 3,
            ori_delta_v: Some(-0.5),
            ori_delta_x: Some(-0.25),
            tot_delta_v: None,
            tot_delta_x: Some(0.75),
        };
        let mut buf = Vec::new();
        write_correlation_csv(&mut buf, &table).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            ",delta_v,delta_x\nORI,-0.5,-0.25\nTOT,undefined,0.75\n"
        );
    }

    #[test]
    fn manifest_path_and_round_trip() {
        let p = RunManifest::path_for(Path::new("out/d.jsonl"));
        assert_eq!(p, Path::new("out/d.jsonl.manifest.json"));
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest {
            command: "synth".into(),
            args: vec!["synth".into(), "--seed".into(), "7".into()],
            config: None,
            seed: Some(7),
            inputs: vec![],
            outputs: vec!["d.jsonl".into()],
            tool_version: "0.1.0".into(),
            schema_version: SCHEMA_VERSION.into(),
        };
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        assert_eq!(RunManifest::load(&path).unwrap(), m);
    }
}
