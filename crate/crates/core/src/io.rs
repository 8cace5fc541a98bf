//! Extended-XYZ reading and writing, and CSV helpers.
//!
//! Each frame is a count line, a comment line of `key=value` pairs and one
//! line per atom. The `Properties` key lists the per-atom columns; `species`
//! and `pos` are required, `forces` is read when present and other columns
//! are skipped. Floats are written in shortest round-trip form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::md::Trajectory;
use crate::species::Species;
use crate::structure::{LabelSource, LabeledStructure, Labels, Structure, Vec3};

/// One parsed frame; labels are present when the frame has an energy and a
/// `forces` column.
#[derive(Clone, Debug, PartialEq)]
pub struct XyzFrame {
    pub structure: Structure<f64>,
    pub labels: Option<Labels<f64>>,
    pub label_source: Option<LabelSource>,
    /// Comment-line keys not consumed above, in file order.
    pub extra: Vec<(String, String)>,
}

fn perr(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

/// Splits `a=1 b="x y" c` into pairs; bare words get an empty value.
fn split_kv(line: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        if chars.peek().is_none() {
            return Ok(out);
        }
        let mut key = String::new();
        while let Some(&c) = chars.peek() {
            if c == '=' || c.is_whitespace() {
                break;
            }
            key.push(c);
            chars.next();
        }
        let mut value = String::new();
        if chars.peek() == Some(&'=') {
            chars.next();
            if chars.peek() == Some(&'"') {
                chars.next();
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some(c) => value.push(c),
                        None => return Err(format!("unterminated quote in value of `{key}`")),
                    }
                }
            } else {
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() {
                        break;
                    }
                    value.push(c);
                    chars.next();
                }
            }
        }
        if key.is_empty() {
            return Err("empty key in comment line".into());
        }
        out.push((key, value));
    }
}

struct Column {
    name: String,
    kind: char,
    width: usize,
}

fn parse_properties(spec: &str) -> std::result::Result<Vec<Column>, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() % 3 != 0 {
        return Err(format!("malformed Properties `{spec}`"));
    }
    parts
        .chunks(3)
        .map(|c| {
            let kind = match c[1] {
                "S" | "R" | "I" | "L" => c[1].chars().next().unwrap(),
                other => return Err(format!("unknown column type `{other}`")),
            };
            let width = c[2].parse::<usize>().map_err(|_| format!("bad column width `{}`", c[2]))?;
            Ok(Column { name: c[0].to_string(), kind, width })
        })
        .collect()
}

fn parse_f64(tok: &str, what: &str) -> std::result::Result<f64, String> {
    let v = tok.parse::<f64>().map_err(|_| format!("cannot parse {what} `{tok}`"))?;
    if !v.is_finite() {
        return Err(format!("{what} is not finite"));
    }
    Ok(v)
}

/// Parses every frame of `text`; `path` only labels error messages.
pub fn parse_extxyz_str(text: &str, path: &Path) -> Result<Vec<XyzFrame>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut frames = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let count_line = i + 1;
        let n: usize = lines[i]
            .trim()
            .parse()
            .map_err(|_| perr(path, count_line, format!("expected an atom count, found `{}`", lines[i].trim())))?;
        if n == 0 {
            return Err(perr(path, count_line, "atom count must be at least 1"));
        }
        let comment = lines.get(i + 1).ok_or_else(|| perr(path, count_line + 1, "missing comment line"))?;
        let mut kv = split_kv(comment).map_err(|m| perr(path, count_line + 1, m))?;
        let take = |kv: &mut Vec<(String, String)>, key: &str| {
            kv.iter().position(|(k, _)| k == key).map(|p| kv.remove(p).1)
        };
        let props = take(&mut kv, "Properties").unwrap_or_else(|| "species:S:1:pos:R:3".into());
        let columns = parse_properties(&props).map_err(|m| perr(path, count_line + 1, m))?;
        let find = |name: &str| {
            let mut off = 0;
            for c in &columns {
                if c.name == name {
                    return Some((off, c));
                }
                off += c.width;
            }
            None
        };
        let (sp_off, sp) =
            find("species").ok_or_else(|| perr(path, count_line + 1, "Properties lacks a species column"))?;
        let (pos_off, pos) = find("pos").ok_or_else(|| perr(path, count_line + 1, "Properties lacks a pos column"))?;
        if sp.kind != 'S' || sp.width != 1 || pos.kind != 'R' || pos.width != 3 {
            return Err(perr(path, count_line + 1, "species must be S:1 and pos R:3"));
        }
        let forces_col = find("forces");
        if forces_col.is_some_and(|(_, c)| c.kind != 'R' || c.width != 3) {
            return Err(perr(path, count_line + 1, "forces must be R:3"));
        }
        let total_width: usize = columns.iter().map(|c| c.width).sum();
        let mut species = Vec::with_capacity(n);
        let mut positions = Vec::with_capacity(n);
        let mut forces: Vec<Vec3<f64>> = Vec::new();
        for a in 0..n {
            let ln = i + 2 + a;
            let line = lines.get(ln).ok_or_else(|| {
                perr(path, ln + 1, format!("expected {n} atom lines, file ended after {a}"))
            })?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != total_width {
                let msg = if toks.len() == 1 && toks[0].parse::<usize>().is_ok() {
                    format!("expected {n} atom lines, found a count line after {a}")
                } else {
                    format!("expected {total_width} fields, found {}", toks.len())
                };
                return Err(perr(path, ln + 1, msg));
            }
            species.push(toks[sp_off].parse::<Species>().map_err(|e| perr(path, ln + 1, e.to_string()))?);
            let vec3 = |off: usize, what: &str| -> Result<Vec3<f64>> {
                let mut v = [0.0; 3];
                for k in 0..3 {
                    v[k] = parse_f64(toks[off + k], what).map_err(|m| perr(path, ln + 1, m))?;
                }
                Ok(v)
            };
            positions.push(vec3(pos_off, "coordinate")?);
            if let Some((f_off, _)) = forces_col {
                forces.push(vec3(f_off, "force")?);
            }
        }
        let structure_id = take(&mut kv, "structure_id").unwrap_or_else(|| format!("frame{}", frames.len()));
        let system_id = take(&mut kv, "system_id").unwrap_or_default();
        let energy = take(&mut kv, "energy")
            .map(|e| parse_f64(&e, "energy").map_err(|m| perr(path, count_line + 1, m)))
            .transpose()?;
        let label_source = take(&mut kv, "label_source")
            .map(|s| s.parse::<LabelSource>().map_err(|e| perr(path, count_line + 1, e.to_string())))
            .transpose()?;
        let structure = Structure::new(species, positions, structure_id, system_id)
            .map_err(|e| perr(path, count_line, e.to_string()))?;
        let labels = match (energy, forces_col) {
            (Some(energy), Some(_)) => Some(Labels { energy, forces }),
            _ => None,
        };
        frames.push(XyzFrame { structure, labels, label_source, extra: kv });
        i += 2 + n;
    }
    Ok(frames)
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))
}

pub fn read_extxyz(path: &Path) -> Result<Vec<XyzFrame>> {
    parse_extxyz_str(&read_text(path)?, path)
}

/// Reads labeled records; frames without labels or a label source are an
/// error.
pub fn parse_extxyz(path: &Path) -> Result<Vec<LabeledStructure<f64>>> {
    let text = read_text(path)?;
    labeled_from_frames(parse_extxyz_str(&text, path)?, path)
}

fn labeled_from_frames(frames: Vec<XyzFrame>, path: &Path) -> Result<Vec<LabeledStructure<f64>>> {
    frames
        .into_iter()
        .map(|f| {
            let id = f.structure.structure_id.clone();
            let missing = || Error::Input(format!("{}: frame `{id}` has no labels", path.display()));
            let labels = f.labels.ok_or_else(missing)?;
            let source = f.label_source.ok_or_else(missing)?;
            LabeledStructure::new(f.structure, labels, source)
        })
        .collect()
}

/// Geometries only. Frames repeating an earlier `structure_id` (the same
/// configuration under another label source) are dropped.
pub fn read_structures(path: &Path) -> Result<Vec<Structure<f64>>> {
    let mut seen = std::collections::BTreeSet::new();
    Ok(read_extxyz(path)?
        .into_iter()
        .map(|f| f.structure)
        .filter(|s| seen.insert(s.structure_id.clone()))
        .collect())
}

fn quote(v: &str) -> String {
    if v.is_empty() || v.chars().any(|c| c.is_whitespace() || c == '=' || c == '"') {
        format!("\"{}\"", v.replace('"', "'"))
    } else {
        v.to_string()
    }
}

fn push_frame(
    out: &mut String,
    structure: &Structure<f64>,
    header: &[(&str, String)],
    columns: &[(&str, &[Vec3<f64>])],
) {
    let _ = writeln!(out, "{}", structure.len());
    let mut props = String::from("species:S:1:pos:R:3");
    for (name, _) in columns {
        let _ = write!(props, ":{name}:R:3");
    }
    let mut comment = String::new();
    for (k, v) in header {
        let _ = write!(comment, "{k}={} ", quote(v));
    }
    let _ = write!(comment, "structure_id={} system_id={} ", quote(&structure.structure_id), quote(&structure.system_id));
    let _ = writeln!(out, "{comment}Properties={props}");
    for (a, (s, p)) in structure.species.iter().zip(&structure.positions).enumerate() {
        let _ = write!(out, "{s} {} {} {}", p[0], p[1], p[2]);
        for (_, col) in columns {
            let v = col[a];
            let _ = write!(out, " {} {} {}", v[0], v[1], v[2]);
        }
        out.push('\n');
    }
}

pub fn format_extxyz(records: &[LabeledStructure<f64>]) -> String {
    let mut out = String::new();
    for r in records {
        let header = [("energy", r.energy.to_string()), ("label_source", r.label_source.to_string())];
        push_frame(&mut out, &r.structure, &header, &[("forces", &r.forces)]);
    }
    out
}

pub fn write_extxyz(records: &[LabeledStructure<f64>], path: &Path) -> Result<()> {
    write_text(path, &format_extxyz(records))
}

pub fn write_structures(structures: &[Structure<f64>], path: &Path) -> Result<()> {
    let mut out = String::new();
    for s in structures {
        push_frame(&mut out, s, &[], &[]);
    }
    write_text(path, &out)
}

/// Writes every recorded frame with its time, energies and velocities.
pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (k, f) in traj.frames.iter().enumerate() {
        let s = Structure {
            species: traj.species.clone(),
            positions: f.positions.clone(),
            structure_id: format!("{}-{k}", traj.label),
            system_id: traj.label.clone(),
        };
        let header = [
            ("time_fs", f.time_fs.to_string()),
            ("potential_energy", f.potential_energy.to_string()),
            ("total_energy", f.total_energy.to_string()),
        ];
        push_frame(&mut out, &s, &header, &[("vel", &f.velocities)]);
    }
    write_text(path, &out)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// Serialises rows to CSV with a header taken from the row type.
pub fn csv_string<R: serde::Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Input(e.to_string()))
}

/// CSV from an explicit header and pre-formatted rows.
pub fn table_string(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.write_record(r).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Input(e.to_string()))
}

pub fn write_csv<R: serde::Serialize>(rows: &[R], path: &Path) -> Result<()> {
    write_text(path, &csv_string(rows)?)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Input(format!("csv: {other:?}")),
    }
}

/// Files written by a pipeline, keyed by name relative to the output
/// directory.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct OutputSet {
    pub dir: PathBuf,
    pub files: BTreeMap<String, PathBuf>,
}

impl OutputSet {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        OutputSet { dir: dir.into(), files: BTreeMap::new() }
    }

    pub fn write(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_text(&path, text)?;
        self.files.insert(name.to_string(), path.clone());
        Ok(path)
    }
}
