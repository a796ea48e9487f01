//! Text format for confusion matrices.
//!
//! ```text
//! labels: ped,obs,emp
//! bands: 10,20,30
//! band 0
//! 31 0 0
//! 0 191 0
//! 127 734 3227
//! band 1
//! ...
//! ```
//!
//! Rows are predicted labels, columns true labels, both in the order of the
//! `labels:` line. Class-labeled files list the classes followed by `emp`;
//! proposition-labeled files list subsets in braces (`{ped+obs}`, `{}` for the
//! empty set) in canonical order. The `bands:` line is omitted for a single
//! aggregated matrix, which is then written as `band 0`.

use std::fmt::Write as _;
use std::path::Path;

use percheck_core::cm::{ClassSet, CmMode, ConfusionMatrix, DistanceBands, DistanceParamCm};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CmFile {
    pub bands: Option<DistanceBands>,
    pub matrices: Vec<ConfusionMatrix>,
}

impl CmFile {
    pub fn banded(dp: &DistanceParamCm) -> Self {
        CmFile {
            bands: Some(dp.bands().clone()),
            matrices: dp.per_band().to_vec(),
        }
    }

    pub fn aggregated(cm: ConfusionMatrix) -> Self {
        CmFile {
            bands: None,
            matrices: vec![cm],
        }
    }

    pub fn mode(&self) -> CmMode {
        self.matrices[0].mode()
    }

    pub fn into_distance_param(self) -> Result<DistanceParamCm> {
        let bands = self
            .bands
            .ok_or_else(|| CliError::validation("fixture has no `bands:` line"))?;
        Ok(DistanceParamCm::new(bands, self.matrices)?)
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> CliError {
    CliError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Splits the `labels:` list into (mode, classes, labels as written).
fn parse_labels(list: &str, line: usize) -> Result<(CmMode, ClassSet, Vec<String>)> {
    let labels: Vec<String> = list.split(',').map(|s| s.trim().to_string()).collect();
    let mode = if labels.iter().any(|l| l.starts_with('{')) {
        CmMode::Prop
    } else {
        CmMode::Class
    };
    let classes: Vec<String> = match mode {
        CmMode::Class => {
            if labels.last().map(String::as_str) != Some(percheck_core::EMPTY_LABEL) {
                return Err(parse_err(line, "class labels must end with `emp`"));
            }
            labels[..labels.len() - 1].to_vec()
        }
        CmMode::Prop => labels
            .iter()
            .filter_map(|l| l.strip_prefix('{').and_then(|s| s.strip_suffix('}')))
            .filter(|inner| !inner.is_empty() && !inner.contains('+'))
            .map(str::to_string)
            .collect(),
    };
    let classes = ClassSet::new(classes).map_err(|e| parse_err(line, e.to_string()))?;
    Ok((mode, classes, labels))
}

pub fn parse(text: &str) -> Result<CmFile> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .peekable();

    let (ln, first) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let list = first
        .strip_prefix("labels:")
        .ok_or_else(|| parse_err(ln, "expected `labels:`"))?;
    let (mode, classes, written) = parse_labels(list, ln)?;
    let template = ConfusionMatrix::zeros(mode, classes)?;
    if template.label_names() != written {
        return Err(parse_err(
            ln,
            format!(
                "labels must be {} in canonical order",
                template.label_names().join(",")
            ),
        ));
    }
    let dim = template.dim();

    let bands = match lines.peek() {
        Some((ln, l)) if l.starts_with("bands:") => {
            let ln = *ln;
            let edges = l["bands:".len()..]
                .split(',')
                .map(|e| e.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(ln, format!("bad band edge: {e}")))?;
            lines.next();
            Some(DistanceBands::new(edges).map_err(|e| parse_err(ln, e.to_string()))?)
        }
        _ => None,
    };
    let expected_blocks = bands.as_ref().map_or(1, DistanceBands::len);

    let mut matrices = Vec::with_capacity(expected_blocks);
    while let Some((ln, header)) = lines.next() {
        let k: usize = header
            .strip_prefix("band ")
            .and_then(|k| k.trim().parse().ok())
            .ok_or_else(|| parse_err(ln, format!("expected `band {}`", matrices.len())))?;
        if k != matrices.len() {
            return Err(parse_err(
                ln,
                format!("expected `band {}`, found `band {k}`", matrices.len()),
            ));
        }
        let mut counts = Vec::with_capacity(dim * dim);
        for row in 0..dim {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| parse_err(ln, format!("band {k}: missing row {row}")))?;
            let values = l
                .split_whitespace()
                .map(str::parse::<u64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(ln, format!("bad count: {e}")))?;
            if values.len() != dim {
                return Err(parse_err(
                    ln,
                    format!("expected {dim} counts, found {}", values.len()),
                ));
            }
            counts.extend(values);
        }
        matrices.push(ConfusionMatrix::from_counts(
            mode,
            template.classes().clone(),
            counts,
        )?);
    }
    if matrices.len() != expected_blocks {
        return Err(parse_err(
            text.lines().count(),
            format!(
                "expected {expected_blocks} band blocks, found {}",
                matrices.len()
            ),
        ));
    }
    Ok(CmFile { bands, matrices })
}

pub fn render(file: &CmFile) -> String {
    let mut out = String::new();
    let first = &file.matrices[0];
    writeln!(out, "labels: {}", first.label_names().join(",")).unwrap();
    if let Some(bands) = &file.bands {
        let edges: Vec<String> = bands.edges().iter().map(|e| format!("{e}")).collect();
        writeln!(out, "bands: {}", edges.join(",")).unwrap();
    }
    for (k, cm) in file.matrices.iter().enumerate() {
        writeln!(out, "band {k}").unwrap();
        for row in cm.counts().chunks(cm.dim()) {
            let row: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
    }
    out
}

pub fn load(path: &Path) -> Result<CmFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text).map_err(|e| e.in_file(path))
}

pub fn save(path: &Path, file: &CmFile) -> Result<()> {
    std::fs::write(path, render(file)).map_err(|e| CliError::io(path, e))
}

/// Table in the `Pred \ True` layout, one per band, for terminal output.
pub fn render_table(cm: &ConfusionMatrix, caption: &str) -> String {
    let labels = cm.label_names();
    let width = labels
        .iter()
        .map(String::len)
        .chain(cm.counts().iter().map(|c| c.to_string().len()))
        .max()
        .unwrap_or(1)
        .max("Pred\\True".len());
    let mut out = String::new();
    writeln!(out, "{caption}").unwrap();
    write!(out, "{:>width$}", "Pred\\True").unwrap();
    for l in &labels {
        write!(out, " {l:>width$}").unwrap();
    }
    out.push('\n');
    for (i, l) in labels.iter().enumerate() {
        write!(out, "{l:>width$}").unwrap();
        for j in 0..cm.dim() {
            write!(out, " {:>width$}", cm.count(i, j)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Caption for band `k`: the upper edge, as in "d <= 10".
pub fn band_caption(bands: Option<&DistanceBands>, k: usize) -> String {
    match bands {
        Some(b) => format!("Confusion matrix for distance d <= {}", b.edges()[k]),
        None => "Confusion matrix (all distances)".to_string(),
    }
}
