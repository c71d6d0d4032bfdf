//! Cohort files on disk.
//!
//! A cohort directory holds `schema.json`, `episodes.csv`
//! (`stay_id,patient_id,subgroup_tags`), `target.csv`
//! (`stay_id,offset_minutes,value`) and one `source_<name>.csv` per source
//! with header `stay_id,patient_id,offset_minutes,<features...>`. Medication
//! sources add a trailing `stop_offset_minutes` column. Empty cells are
//! missing numerics or `unknown` categories.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use super::episode::{dedup_target_track, Episode, SourceSeries, TimePoint};
use super::schema::{CohortSchema, SourceKind, SourceSchema};
use crate::error::{Error, Result};

pub const SCHEMA_FILE: &str = "schema.json";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const TARGET_FILE: &str = "target.csv";
pub const STOP_OFFSET_COLUMN: &str = "stop_offset_minutes";
const TAG_SEPARATOR: char = ';';

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub schema: CohortSchema,
    pub episodes: Vec<Episode>,
}

pub fn source_file_name(source: &SourceSchema) -> String {
    format!("source_{}.csv", source.source_name)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn feature_header(source: &SourceSchema) -> Vec<String> {
    let mut h = vec![
        "stay_id".to_string(),
        "patient_id".to_string(),
        "offset_minutes".to_string(),
    ];
    h.extend(source.numeric_features.iter().cloned());
    h.extend(source.categorical_features.iter().map(|c| c.name.clone()));
    if source.kind == SourceKind::Medication {
        h.push(STOP_OFFSET_COLUMN.to_string());
    }
    h
}

impl Cohort {
    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        self.episodes.iter().try_for_each(|e| e.validate(&self.schema))
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.schema.save(&dir.join(SCHEMA_FILE))?;

        let path = dir.join(EPISODES_FILE);
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        w.write_record(["stay_id", "patient_id", "subgroup_tags"])
            .map_err(csv_err(&path))?;
        for e in &self.episodes {
            let tags: Vec<&str> = e.subgroup_tags.iter().map(String::as_str).collect();
            w.write_record([e.stay_id.as_str(), e.patient_id.as_str(), &tags.join(";")])
                .map_err(csv_err(&path))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join(TARGET_FILE);
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        w.write_record(["stay_id", "offset_minutes", "value"])
            .map_err(csv_err(&path))?;
        for e in &self.episodes {
            for m in &e.target_track {
                w.write_record([
                    e.stay_id.clone(),
                    m.offset_minutes.to_string(),
                    m.value.to_string(),
                ])
                .map_err(csv_err(&path))?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        for (m, source) in self.schema.sources.iter().enumerate() {
            let path = dir.join(source_file_name(source));
            let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
            w.write_record(feature_header(source)).map_err(csv_err(&path))?;
            for e in &self.episodes {
                for p in &e.series[m].time_points {
                    let mut row = vec![
                        e.stay_id.clone(),
                        e.patient_id.clone(),
                        p.offset_minutes.to_string(),
                    ];
                    row.extend(
                        p.numeric
                            .iter()
                            .map(|v| v.map(|x| x.to_string()).unwrap_or_default()),
                    );
                    for (feat, &id) in source.categorical_features.iter().zip(&p.categorical) {
                        let name = feat.name_of(id).unwrap_or_default();
                        row.push(if id == feat.unknown_id() {
                            String::new()
                        } else {
                            name.to_string()
                        });
                    }
                    if source.kind == SourceKind::Medication {
                        row.push(
                            p.stop_offset_minutes
                                .map(|x| x.to_string())
                                .unwrap_or_default(),
                        );
                    }
                    w.write_record(&row).map_err(csv_err(&path))?;
                }
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Cohort> {
        let schema = CohortSchema::load(&dir.join(SCHEMA_FILE))?;

        let path = dir.join(EPISODES_FILE);
        let mut r = open_reader(&path)?;
        let mut episodes = Vec::new();
        let mut by_stay: HashMap<String, usize> = HashMap::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err(&path))?;
            let stay_id = rec.get(0).unwrap_or_default().to_string();
            let patient_id = rec.get(1).unwrap_or_default().to_string();
            if stay_id.is_empty() || patient_id.is_empty() {
                return Err(Error::schema(
                    format!("{}:{}", path.display(), line + 2),
                    "stay_id and patient_id are required",
                ));
            }
            let tags: BTreeSet<String> = rec
                .get(2)
                .unwrap_or_default()
                .split(TAG_SEPARATOR)
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect();
            if by_stay.insert(stay_id.clone(), episodes.len()).is_some() {
                return Err(Error::schema(
                    format!("{}:{}", path.display(), line + 2),
                    format!("duplicate stay_id `{stay_id}`"),
                ));
            }
            episodes.push(Episode {
                stay_id,
                patient_id,
                subgroup_tags: tags,
                series: Vec::new(),
                target_track: Vec::new(),
            });
        }

        let path = dir.join(TARGET_FILE);
        let mut r = open_reader(&path)?;
        let mut raw_targets: Vec<Vec<(f64, f64)>> = vec![Vec::new(); episodes.len()];
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err(&path))?;
            let at = || format!("{}:{}", path.display(), line + 2);
            let idx = lookup_stay(&by_stay, rec.get(0).unwrap_or_default(), &at)?;
            let t = parse_number(rec.get(1).unwrap_or_default(), &at)?;
            let v = parse_number(rec.get(2).unwrap_or_default(), &at)?;
            raw_targets[idx].push((t, v));
        }
        for (e, raw) in episodes.iter_mut().zip(&raw_targets) {
            e.target_track = dedup_target_track(raw);
        }

        for source in &schema.sources {
            let path = dir.join(source_file_name(source));
            let points = read_source_file(&path, source, &by_stay, episodes.len())?;
            for (e, pts) in episodes.iter_mut().zip(points) {
                e.series.push(SourceSeries::from_points(source.source_id, pts));
            }
        }

        let cohort = Cohort { schema, episodes };
        cohort.validate()?;
        Ok(cohort)
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    csv::Reader::from_path(path).map_err(csv_err(path))
}

fn lookup_stay(by_stay: &HashMap<String, usize>, stay: &str, at: &dyn Fn() -> String) -> Result<usize> {
    by_stay
        .get(stay)
        .copied()
        .ok_or_else(|| Error::schema(at(), format!("stay `{stay}` not listed in {EPISODES_FILE}")))
}

fn parse_number(cell: &str, at: &dyn Fn() -> String) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::schema(at(), format!("`{cell}` is not a finite number")))
}

fn read_source_file(
    path: &PathBuf,
    source: &SourceSchema,
    by_stay: &HashMap<String, usize>,
    n_episodes: usize,
) -> Result<Vec<Vec<TimePoint>>> {
    let mut r = open_reader(path)?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let expected = feature_header(source);
    for name in &expected {
        if col(name).is_none() {
            return Err(Error::schema(
                format!("{}", path.display()),
                format!("missing column `{name}`"),
            ));
        }
    }
    if let Some(extra) = header.iter().find(|h| !expected.iter().any(|e| e == h)) {
        return Err(Error::schema(
            format!("{}", path.display()),
            format!("unexpected column `{extra}`"),
        ));
    }
    let stay_col = col("stay_id").unwrap();
    let offset_col = col("offset_minutes").unwrap();
    let num_cols: Vec<usize> = source.numeric_features.iter().map(|n| col(n).unwrap()).collect();
    let cat_cols: Vec<usize> = source
        .categorical_features
        .iter()
        .map(|c| col(&c.name).unwrap())
        .collect();
    let stop_col = col(STOP_OFFSET_COLUMN);

    let mut out: Vec<Vec<TimePoint>> = vec![Vec::new(); n_episodes];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let at = || format!("{}:{}", path.display(), line + 2);
        let idx = lookup_stay(by_stay, rec.get(stay_col).unwrap_or_default(), &at)?;
        let offset = parse_number(rec.get(offset_col).unwrap_or_default(), &at)?;
        let numeric = num_cols
            .iter()
            .map(|&c| {
                let cell = rec.get(c).unwrap_or_default().trim();
                if cell.is_empty() {
                    Ok(None)
                } else {
                    parse_number(cell, &at).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let categorical = cat_cols
            .iter()
            .zip(&source.categorical_features)
            .map(|(&c, feat)| feat.id_or_unknown(rec.get(c).unwrap_or_default().trim()))
            .collect();
        let mut p = TimePoint::new(offset, numeric, categorical);
        if let Some(c) = stop_col {
            let cell = rec.get(c).unwrap_or_default().trim();
            if !cell.is_empty() {
                p.stop_offset_minutes = Some(parse_number(cell, &at)?);
            }
        }
        out[idx].push(p);
    }
    Ok(out)
}
