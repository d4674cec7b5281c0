use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Hyperparams, MetaSets, Model, ParamId, Parameters, TIME_SLOTS};
use crate::data::Dataset;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};

/// External ids behind the dense ids of a model.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocab {
    pub users: Vec<String>,
    pub pois: Vec<String>,
    pub words: Vec<String>,
    pub items: Vec<String>,
}

impl Vocab {
    pub fn from_dataset(ds: &Dataset) -> Vocab {
        Vocab {
            users: ds.users.iter().map(|u| u.user_id.clone()).collect(),
            pois: ds.pois.iter().map(|p| p.poi_id.clone()).collect(),
            words: ds.words.clone(),
            items: ds.items.clone(),
        }
    }

    pub fn user(&self, id: &str) -> Option<usize> {
        self.users.iter().position(|u| u == id)
    }

    pub fn poi(&self, id: &str) -> Option<usize> {
        self.pois.iter().position(|p| p == id)
    }

    pub fn item(&self, id: &str) -> Option<usize> {
        self.items.iter().position(|m| m == id)
    }

    /// Errors unless `ds` has exactly this vocabulary, in the same order.
    pub fn check_matches(&self, ds: &Dataset) -> Result<()> {
        let other = Vocab::from_dataset(ds);
        for (kind, a, b) in [
            ("user", &self.users, &other.users),
            ("poi", &self.pois, &other.pois),
            ("word", &self.words, &other.words),
            ("item", &self.items, &other.items),
        ] {
            if a != b {
                return Err(Error::Data(format!(
                    "model {kind} vocabulary ({} ids) does not match the dataset ({} ids)",
                    a.len(),
                    b.len()
                )));
            }
        }
        Ok(())
    }
}

/// A model together with its vocabulary, stored as one text file made of
/// `[<name> <line count>]` sections.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArchive {
    pub model: Model,
    pub vocab: Vocab,
}

fn index_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

fn push_section(out: &mut String, name: &str, body: &str) {
    let lines = body.lines().count();
    let _ = writeln!(out, "[{name} {lines}]");
    out.push_str(body);
}

fn check_ids(kind: &str, ids: &[String]) -> Result<()> {
    if let Some(bad) = ids.iter().find(|s| s.is_empty() || s.contains(char::is_whitespace)) {
        return Err(Error::Data(format!("{kind} id {bad:?} cannot be stored in a model archive")));
    }
    Ok(())
}

impl ModelArchive {
    pub fn new(model: Model, vocab: Vocab) -> Result<ModelArchive> {
        let s = model.params.sizes();
        if vocab.users.len() != s.users
            || vocab.pois.len() != s.pois
            || vocab.words.len() != s.words
            || vocab.items.len() != s.items
        {
            return Err(Error::Data("vocabulary sizes do not match the parameters".into()));
        }
        Ok(ModelArchive { model, vocab })
    }

    fn tensor_ids(&self, id: ParamId) -> Vec<String> {
        let p = &self.model.params;
        match id {
            ParamId::UserEmb => self.vocab.users.clone(),
            ParamId::PoiEmb => self.vocab.pois.clone(),
            ParamId::UserMetaEmb => self.vocab.items.clone(),
            ParamId::PoiMetaEmb => self.vocab.words.clone(),
            ParamId::B1 | ParamId::B2 | ParamId::B3 => index_ids(1),
            _ => index_ids(p.shape(id).0),
        }
    }

    pub fn to_text(&self) -> Result<String> {
        check_ids("user", &self.vocab.users)?;
        check_ids("poi", &self.vocab.pois)?;
        check_ids("word", &self.vocab.words)?;
        check_ids("item", &self.vocab.items)?;
        let hp = &self.model.hp;
        let s = self.model.params.sizes();
        let mut out = String::new();
        let manifest = format!(
            "format nextpoi-model-1\ndim {}\nalpha {}\nbeta {}\ninterval_hours {}\nlambda {}\n\
             learning_rate {}\nuse_meta {}\nuse_interval {}\nuse_timeslot {}\ntime_slots {}\n\
             tz_offset_seconds {}\nusers {}\npois {}\nwords {}\nitems {}\n",
            hp.dim,
            hp.alpha,
            hp.beta,
            hp.interval_hours,
            hp.lambda,
            hp.learning_rate,
            hp.use_meta,
            hp.use_interval,
            hp.use_timeslot,
            TIME_SLOTS,
            hp.tz_offset_secs,
            s.users,
            s.pois,
            s.words,
            s.items
        );
        push_section(&mut out, "manifest", &manifest);

        let meta_lines = |owners: &[String], sets: &[Vec<usize>], names: &[String]| {
            let mut body = String::new();
            for (owner, set) in owners.iter().zip(sets) {
                let joined: Vec<&str> = set.iter().map(|&i| names[i].as_str()).collect();
                let _ = writeln!(body, "{owner}\t{}", joined.join(","));
            }
            body
        };
        let meta = &self.model.meta;
        push_section(&mut out, "poi_meta", &meta_lines(&self.vocab.pois, &meta.poi_words, &self.vocab.words));
        push_section(&mut out, "user_meta", &meta_lines(&self.vocab.users, &meta.user_items, &self.vocab.items));

        let p = &self.model.params;
        for id in ParamId::ALL {
            let ids = self.tensor_ids(id);
            let (rows, cols) = p.shape(id);
            let table = EmbeddingTable::from_array(
                Array2::from_shape_vec((rows, cols), p.coords(id).to_vec()).expect("shape"),
            );
            push_section(&mut out, &format!("tensor {}", id.name()), &table.to_text(&ids));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_text()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ModelArchive> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelArchive::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<ModelArchive> {
        let lines: Vec<&str> = text.lines().collect();
        // section name -> (first body line number, body)
        let mut sections: HashMap<String, (usize, String)> = HashMap::new();
        let mut i = 0;
        while i < lines.len() {
            let header = lines[i];
            if header.trim().is_empty() {
                i += 1;
                continue;
            }
            let inner = header
                .strip_prefix('[')
                .and_then(|h| h.strip_suffix(']'))
                .ok_or_else(|| Error::parse(source, i + 1, format!("expected section header, got {header:?}")))?;
            let (name, count) = inner
                .rsplit_once(' ')
                .and_then(|(n, c)| Some((n.to_string(), c.parse::<usize>().ok()?)))
                .ok_or_else(|| Error::parse(source, i + 1, "section header must be `[name lines]`"))?;
            if i + 1 + count > lines.len() {
                return Err(Error::parse(source, i + 1, format!("section {name} is truncated")));
            }
            let mut body = lines[i + 1..i + 1 + count].join("\n");
            body.push('\n');
            if sections.insert(name.clone(), (i + 2, body)).is_some() {
                return Err(Error::parse(source, i + 1, format!("duplicate section {name}")));
            }
            i += 1 + count;
        }
        let mut take = |name: &str| {
            sections
                .remove(name)
                .ok_or_else(|| Error::Data(format!("{source}: missing section [{name}]")))
        };

        let (mline, manifest) = take("manifest")?;
        let mut fields = HashMap::new();
        for (k, line) in manifest.lines().enumerate() {
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| Error::parse(source, mline + k, format!("bad manifest line {line:?}")))?;
            fields.insert(key.to_string(), (mline + k, value.to_string()));
        }
        fn field<T: std::str::FromStr>(f: &HashMap<String, (usize, String)>, source: &str, key: &str) -> Result<T> {
            let (line, v) = f
                .get(key)
                .ok_or_else(|| Error::Data(format!("{source}: manifest lacks {key}")))?;
            v.parse()
                .map_err(|_| Error::parse(source, *line, format!("bad value {v:?} for {key}")))
        }
        let format: String = field(&fields, source, "format")?;
        if format != "nextpoi-model-1" {
            return Err(Error::Data(format!("{source}: unsupported archive format {format:?}")));
        }
        let slots: usize = field(&fields, source, "time_slots")?;
        if slots != TIME_SLOTS {
            return Err(Error::Data(format!("{source}: archive has {slots} time slots, expected {TIME_SLOTS}")));
        }
        let hp = Hyperparams {
            dim: field(&fields, source, "dim")?,
            alpha: field(&fields, source, "alpha")?,
            beta: field(&fields, source, "beta")?,
            interval_hours: field(&fields, source, "interval_hours")?,
            lambda: field(&fields, source, "lambda")?,
            learning_rate: field(&fields, source, "learning_rate")?,
            use_meta: field(&fields, source, "use_meta")?,
            use_interval: field(&fields, source, "use_interval")?,
            use_timeslot: field(&fields, source, "use_timeslot")?,
            tz_offset_secs: field(&fields, source, "tz_offset_seconds")?,
        };
        let d = hp.dim;

        let mut tensors = HashMap::new();
        for id in ParamId::ALL {
            let (line, body) = take(&format!("tensor {}", id.name()))?;
            let (ids, table) = EmbeddingTable::parse_text(&body, source, line - 1)?;
            if table.dim() != d {
                return Err(Error::DimMismatch {
                    expected: d,
                    got: table.dim(),
                });
            }
            tensors.insert(id, (ids, table));
        }
        let mut pull = |id: ParamId| tensors.remove(&id).expect("all tensors parsed");
        let (users, user_emb) = pull(ParamId::UserEmb);
        let (pois, poi_emb) = pull(ParamId::PoiEmb);
        let (items, user_meta_emb) = pull(ParamId::UserMetaEmb);
        let (words, poi_meta_emb) = pull(ParamId::PoiMetaEmb);
        let vocab = Vocab {
            users,
            pois,
            words,
            items,
        };
        for (key, n) in [
            ("users", vocab.users.len()),
            ("pois", vocab.pois.len()),
            ("words", vocab.words.len()),
            ("items", vocab.items.len()),
        ] {
            let declared: usize = field(&fields, source, key)?;
            if declared != n {
                return Err(Error::Data(format!("{source}: manifest declares {declared} {key}, tensors hold {n}")));
            }
        }
        let mut square = |id: ParamId, rows: usize| -> Result<Array2<f64>> {
            let m = pull(id).1.into_array();
            if m.nrows() != rows {
                return Err(Error::Data(format!("{source}: tensor {} has {} rows, expected {rows}", id.name(), m.nrows())));
            }
            Ok(m)
        };
        let w0 = square(ParamId::W0, d)?;
        let w_pi = square(ParamId::WPi, d)?;
        let w1 = square(ParamId::W1, d)?;
        let w2 = square(ParamId::W2, d)?;
        let w3 = square(ParamId::W3, d)?;
        let vector = |m: Array2<f64>| -> Array1<f64> { m.row(0).to_owned() };
        let b1 = vector(square(ParamId::B1, 1)?);
        let b2 = vector(square(ParamId::B2, 1)?);
        let b3 = vector(square(ParamId::B3, 1)?);
        let slot_bias = square(ParamId::SlotBias, TIME_SLOTS)?;
        let params = Parameters {
            user_emb,
            poi_emb,
            user_meta_emb,
            poi_meta_emb,
            w0,
            w_pi,
            w1,
            w2,
            w3,
            b1,
            b2,
            b3,
            slot_bias,
        };

        let mut parse_meta = |name: &str, owners: &[String], names: &[String]| -> Result<Vec<Vec<usize>>> {
            let (line, body) = take_meta(&mut sections, source, name)?;
            let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
            let rows: Vec<&str> = body.lines().collect();
            if rows.len() != owners.len() {
                return Err(Error::Data(format!("{source}: [{name}] has {} lines, expected {}", rows.len(), owners.len())));
            }
            rows.iter()
                .zip(owners)
                .enumerate()
                .map(|(k, (row, owner))| {
                    let (who, list) = row.split_once('\t').unwrap_or((row, ""));
                    if who != owner {
                        return Err(Error::parse(source, line + k, format!("expected {owner:?}, found {who:?}")));
                    }
                    list.split(',')
                        .filter(|s| !s.is_empty())
                        .map(|s| {
                            index
                                .get(s)
                                .copied()
                                .ok_or_else(|| Error::parse(source, line + k, format!("unknown meta item {s:?}")))
                        })
                        .collect()
                })
                .collect()
        };
        let meta = MetaSets {
            poi_words: parse_meta("poi_meta", &vocab.pois, &vocab.words)?,
            user_items: parse_meta("user_meta", &vocab.users, &vocab.items)?,
        };
        let model = Model::new(hp, params, meta)?;
        ModelArchive::new(model, vocab)
    }
}

fn take_meta(
    sections: &mut HashMap<String, (usize, String)>,
    source: &str,
    name: &str,
) -> Result<(usize, String)> {
    sections
        .remove(name)
        .ok_or_else(|| Error::Data(format!("{source}: missing section [{name}]")))
}
