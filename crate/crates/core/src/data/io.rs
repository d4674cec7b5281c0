use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{CheckIn, Dataset, Poi, Split};
use crate::error::{Error, Result};

/// Files making up a preprocessed dataset bundle.
pub const BUNDLE_FILES: [&str; 6] = [
    "checkins.tsv",
    "pois.tsv",
    "users.tsv",
    "vocab.tsv",
    "split.tsv",
    "stats.tsv",
];

#[derive(Debug, Clone)]
pub struct CorpusPaths {
    pub checkins: PathBuf,
    pub pois: PathBuf,
    pub users: Option<PathBuf>,
}

impl CorpusPaths {
    /// Paths of the corpus files inside a bundle directory.
    pub fn in_bundle(dir: &Path) -> CorpusPaths {
        CorpusPaths {
            checkins: dir.join("checkins.tsv"),
            pois: dir.join("pois.tsv"),
            users: Some(dir.join("users.tsv")),
        }
    }
}

fn lines(path: &Path) -> Result<impl Iterator<Item = (usize, Result<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let owned = path.to_path_buf();
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(move |(i, l)| (i + 1, l.map_err(|e| Error::io(&owned, e))))
        .filter(|(_, l)| match l {
            Ok(s) => {
                let t = s.trim();
                !t.is_empty() && !t.starts_with('#')
            }
            Err(_) => true,
        }))
}

fn split_list(field: Option<&str>) -> Vec<String> {
    field
        .map(|f| {
            f.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        })
        .unwrap_or_default()
}

/// Reads `user_id<TAB>poi_id<TAB>timestamp` lines.
pub fn read_checkin_file(path: &Path) -> Result<Vec<CheckIn>> {
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (no, line) in lines(path)? {
        let line = line?;
        let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                &name,
                no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let (user, poi) = (fields[0].trim(), fields[1].trim());
        if user.is_empty() || poi.is_empty() {
            return Err(Error::parse(&name, no, "empty user or poi id"));
        }
        let timestamp: i64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(&name, no, format!("bad timestamp {:?}", fields[2])))?;
        if timestamp <= 0 {
            return Err(Error::parse(&name, no, "timestamp must be positive"));
        }
        out.push(CheckIn {
            user_id: user.to_string(),
            poi_id: poi.to_string(),
            timestamp,
        });
    }
    Ok(out)
}

/// Reads `poi_id<TAB>latitude<TAB>longitude[<TAB>word,word,...]` lines. A POI
/// listed twice must carry the same coordinates; its word lists are merged.
pub fn read_poi_file(path: &Path) -> Result<Vec<Poi>> {
    let name = path.display().to_string();
    let mut by_id: HashMap<String, Poi> = HashMap::new();
    let mut order = Vec::new();
    for (no, line) in lines(path)? {
        let line = line?;
        let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
        if fields.len() < 3 || fields.len() > 4 {
            return Err(Error::parse(
                &name,
                no,
                format!("expected 3 or 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(Error::parse(&name, no, "empty poi id"));
        }
        let coord = |s: &str, what: &str, lim: f64| -> Result<f64> {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::parse(&name, no, format!("bad {what} {s:?}")))?;
            if !v.is_finite() || v.abs() > lim {
                return Err(Error::parse(&name, no, format!("{what} {v} out of range")));
            }
            Ok(v)
        };
        let latitude = coord(fields[1], "latitude", 90.0)?;
        let longitude = coord(fields[2], "longitude", 180.0)?;
        let words = split_list(fields.get(3).copied());
        match by_id.get_mut(id) {
            Some(existing) => {
                if existing.latitude != latitude || existing.longitude != longitude {
                    return Err(Error::parse(
                        &name,
                        no,
                        format!("conflicting coordinates for duplicate poi {id}"),
                    ));
                }
                existing.meta_items.extend(words);
            }
            None => {
                order.push(id.to_string());
                by_id.insert(
                    id.to_string(),
                    Poi {
                        poi_id: id.to_string(),
                        latitude,
                        longitude,
                        meta_items: words,
                    },
                );
            }
        }
    }
    Ok(order.into_iter().map(|id| by_id.remove(&id).unwrap()).collect())
}

/// Reads `user_id<TAB>item,item,...` lines into a map; repeated users merge.
pub fn read_user_file(path: &Path) -> Result<HashMap<String, Vec<String>>> {
    let name = path.display().to_string();
    let mut out: HashMap<String, Vec<String>> = HashMap::new();
    for (no, line) in lines(path)? {
        let line = line?;
        let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
        if fields.len() > 2 {
            return Err(Error::parse(
                &name,
                no,
                format!("expected at most 2 tab-separated fields, found {}", fields.len()),
            ));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(Error::parse(&name, no, "empty user id"));
        }
        out.entry(id.to_string())
            .or_default()
            .extend(split_list(fields.get(1).copied()));
    }
    Ok(out)
}

/// Loads a corpus into a dataset: sequences sorted, ids densified.
pub fn load_checkins(paths: &CorpusPaths) -> Result<Dataset> {
    let pois = read_poi_file(&paths.pois)?;
    let meta = match &paths.users {
        Some(p) => read_user_file(p)?,
        None => HashMap::new(),
    };
    let checkins = read_checkin_file(&paths.checkins)?;
    Dataset::from_records(pois, &meta, &checkins)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, w: BufWriter<File>) -> Result<()> {
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .sync_all()
        .map_err(|e| Error::io(path, e))
}

/// Writes a text file built line by line, attaching the path to any I/O error.
pub(crate) fn write_text<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let mut w = create(path)?;
    body(&mut w).map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

/// Writes the canonical dataset bundle. Feeding the bundle's corpus files back
/// through loading and filtering reproduces it byte for byte.
pub fn write_bundle(dir: &Path, ds: &Dataset, split: &Split) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join("checkins.tsv"), |w| {
        for (u, seq) in ds.users.iter().zip(&ds.sequences) {
            for v in seq {
                writeln!(w, "{}\t{}\t{}", u.user_id, ds.pois[v.poi].poi_id, v.timestamp)?;
            }
        }
        Ok(())
    })?;
    write_text(&dir.join("pois.tsv"), |w| {
        for p in &ds.pois {
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                p.poi_id,
                p.latitude,
                p.longitude,
                p.meta_items.join(",")
            )?;
        }
        Ok(())
    })?;
    write_text(&dir.join("users.tsv"), |w| {
        for u in &ds.users {
            writeln!(w, "{}\t{}", u.user_id, u.meta_items.join(","))?;
        }
        Ok(())
    })?;
    write_text(&dir.join("vocab.tsv"), |w| {
        writeln!(w, "# kind\tdense_id\tid")?;
        let kinds: [(&str, Vec<&str>); 4] = [
            ("user", ds.users.iter().map(|u| u.user_id.as_str()).collect()),
            ("poi", ds.pois.iter().map(|p| p.poi_id.as_str()).collect()),
            ("word", ds.words.iter().map(String::as_str).collect()),
            ("item", ds.items.iter().map(String::as_str).collect()),
        ];
        for (kind, ids) in kinds {
            for (i, id) in ids.iter().enumerate() {
                writeln!(w, "{kind}\t{i}\t{id}")?;
            }
        }
        Ok(())
    })?;
    write_text(&dir.join("split.tsv"), |w| {
        writeln!(w, "# user_id\ttrain\tvalidation\ttest")?;
        for (u, s) in ds.users.iter().zip(&split.users) {
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                u.user_id,
                s.train_end,
                s.valid_end - s.train_end,
                s.len - s.valid_end
            )?;
        }
        Ok(())
    })?;
    write_text(&dir.join("stats.tsv"), |w| write!(w, "{}", ds.stats().to_tsv()))
}
