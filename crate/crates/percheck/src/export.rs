//! Explicit-state files for external probabilistic model checkers.
//!
//! * `<stem>.tra`: `dtmc`, then one `src dst prob` line per transition with
//!   17 significant digits.
//! * `<stem>.lab`: `#DECLARATION`, the label names, `#END`, then
//!   `state label...` for every state carrying at least one label.
//! * `<stem>.sta`: a comment header with the crosswalk cell, road length and
//!   class set, then `index cell speed env` per state.
//!
//! [`import`] reads the three files back into an identical chain.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use percheck_core::chain::Dtmc;
use percheck_core::cm::{ClassSet, EMPTY_LABEL};
use percheck_core::model::{AgentState, EnvState, PEDESTRIAN};
use percheck_core::{MarkovChain, StateLabels};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportFiles {
    pub transitions: PathBuf,
    pub labels: PathBuf,
    pub states: PathBuf,
}

impl ExportFiles {
    pub fn with_stem(dir: &Path, stem: &str) -> Self {
        ExportFiles {
            transitions: dir.join(format!("{stem}.tra")),
            labels: dir.join(format!("{stem}.lab")),
            states: dir.join(format!("{stem}.sta")),
        }
    }
}

pub fn render_transitions(chain: &MarkovChain) -> String {
    let mut out = String::from("dtmc\n");
    for (src, row) in chain.dtmc().rows().iter().enumerate() {
        for &(dst, p) in row {
            writeln!(out, "{src} {dst} {p:.16e}").unwrap();
        }
    }
    out
}

pub fn render_labels(chain: &MarkovChain) -> String {
    let mut out = String::from("#DECLARATION\n");
    let names: Vec<&str> = StateLabels::NAMED.iter().map(|(_, n)| *n).collect();
    writeln!(out, "{}", names.join(" ")).unwrap();
    out.push_str("#END\n");
    for i in 0..chain.len() {
        let labels: Vec<&str> = chain.labels(i).names().collect();
        if !labels.is_empty() {
            writeln!(out, "{i} {}", labels.join(" ")).unwrap();
        }
    }
    out
}

pub fn render_states(chain: &MarkovChain, classes: &ClassSet, n_cells: u32) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "# crosswalk_cell {} n_cells {} classes {}",
        chain.crosswalk_cell(),
        n_cells,
        classes.names().join(",")
    )
    .unwrap();
    out.push_str("# index cell speed env\n");
    let env = chain.env().display(classes);
    for (i, a) in chain.agents().iter().enumerate() {
        writeln!(out, "{i} {} {} {env}", a.cell, a.speed).unwrap();
    }
    out
}

pub fn export(
    chain: &MarkovChain,
    classes: &ClassSet,
    n_cells: u32,
    files: &ExportFiles,
) -> Result<()> {
    let write = |p: &Path, s: String| std::fs::write(p, s).map_err(|e| CliError::io(p, e));
    write(&files.transitions, render_transitions(chain))?;
    write(&files.labels, render_labels(chain))?;
    write(&files.states, render_states(chain, classes, n_cells))
}

fn parse_err(line: usize, msg: impl Into<String>) -> CliError {
    CliError::Parse {
        line,
        msg: msg.into(),
    }
}

fn field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| parse_err(line, format!("bad {what}")))
}

pub fn parse_transitions(text: &str) -> Result<Vec<Vec<(usize, f64)>>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "dtmc")) => {}
        _ => return Err(parse_err(1, "expected `dtmc`")),
    }
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    for (ln, line) in lines.filter(|(_, l)| !l.is_empty()) {
        let mut tok = line.split_whitespace();
        let src: usize = field(tok.next(), ln, "source state")?;
        let dst: usize = field(tok.next(), ln, "target state")?;
        let p: f64 = field(tok.next(), ln, "probability")?;
        if tok.next().is_some() {
            return Err(parse_err(ln, "trailing fields"));
        }
        if src + 1 < rows.len() {
            return Err(parse_err(ln, "transitions must be grouped by source state"));
        }
        if rows.len() <= src {
            rows.resize_with(src + 1, Vec::new);
        }
        rows[src].push((dst, p));
    }
    Ok(rows)
}

/// Label sets per state, for `n` states.
pub fn parse_labels(text: &str, n: usize) -> Result<Vec<StateLabels>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    if lines.next().map(|(_, l)| l) != Some("#DECLARATION") {
        return Err(parse_err(1, "expected `#DECLARATION`"));
    }
    let mut declared = Vec::new();
    for (ln, line) in lines.by_ref() {
        if line == "#END" {
            break;
        }
        for name in line.split_whitespace() {
            let l = StateLabels::from_name(name)
                .ok_or_else(|| parse_err(ln, format!("unknown label `{name}`")))?;
            declared.push(l);
        }
    }
    let mut out = vec![StateLabels::empty(); n];
    for (ln, line) in lines.filter(|(_, l)| !l.is_empty()) {
        let mut tok = line.split_whitespace();
        let state: usize = field(tok.next(), ln, "state index")?;
        if state >= n {
            return Err(parse_err(ln, format!("state {state} out of range")));
        }
        for name in tok {
            let l = StateLabels::from_name(name)
                .filter(|l| declared.contains(l))
                .ok_or_else(|| parse_err(ln, format!("undeclared label `{name}`")))?;
            out[state].insert(l);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateMap {
    pub crosswalk_cell: u32,
    pub n_cells: u32,
    pub classes: ClassSet,
    pub agents: Vec<AgentState>,
    pub env: EnvState,
}

pub fn parse_states(text: &str) -> Result<StateMap> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (ln, header) = lines.next().ok_or_else(|| parse_err(1, "empty state map"))?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    let (k, n, classes) = match tok[..] {
        ["#", "crosswalk_cell", k, "n_cells", n, "classes", c] => (k, n, c),
        _ => {
            return Err(parse_err(
                ln,
                "expected `# crosswalk_cell K n_cells N classes C1,C2,...`",
            ))
        }
    };
    let crosswalk_cell = field(Some(k), ln, "crosswalk cell")?;
    let n_cells = field(Some(n), ln, "cell count")?;
    let classes = ClassSet::new(classes.split(',')).map_err(|e| parse_err(ln, e.to_string()))?;

    let mut agents = Vec::new();
    let mut env: Option<EnvState> = None;
    for (ln, line) in lines.filter(|(_, l)| !l.starts_with('#')) {
        let mut tok = line.split_whitespace();
        let index: usize = field(tok.next(), ln, "state index")?;
        if index != agents.len() {
            return Err(parse_err(ln, format!("expected state {}", agents.len())));
        }
        let cell = field(tok.next(), ln, "cell")?;
        let speed = field(tok.next(), ln, "speed")?;
        let name = tok.next().ok_or_else(|| parse_err(ln, "missing env"))?;
        let e = if name == EMPTY_LABEL {
            EnvState::empty()
        } else {
            let names: Vec<&str> = name.split('+').collect();
            EnvState::from_names(&classes, &names).map_err(|e| parse_err(ln, e.to_string()))?
        };
        match &env {
            Some(prev) if *prev != e => return Err(parse_err(ln, "environment changes between states")),
            _ => env = Some(e),
        }
        agents.push(AgentState::new(cell, speed));
    }
    Ok(StateMap {
        crosswalk_cell,
        n_cells,
        classes,
        agents,
        env: env.unwrap_or_else(EnvState::empty),
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Reads exported files back. The initial state is the one labelled `init`.
pub fn import(files: &ExportFiles) -> Result<(MarkovChain, ClassSet)> {
    let map = parse_states(&read(&files.states)?).map_err(|e| e.in_file(&files.states))?;
    let n = map.agents.len();
    let mut rows =
        parse_transitions(&read(&files.transitions)?).map_err(|e| e.in_file(&files.transitions))?;
    if rows.len() > n {
        return Err(CliError::validation(format!(
            "{}: {} source states but {n} states in the state map",
            files.transitions.display(),
            rows.len()
        )));
    }
    rows.resize_with(n, Vec::new);
    let labels = parse_labels(&read(&files.labels)?, n).map_err(|e| e.in_file(&files.labels))?;
    let init = labels
        .iter()
        .position(|l| l.contains(StateLabels::INIT))
        .ok_or_else(|| CliError::validation(format!("{}: no `init` state", files.labels.display())))?;
    let dtmc = Dtmc::new(rows, init)?;
    let ped_env = map
        .env
        .objects
        .iter()
        .any(|&c| map.classes.name(c) == PEDESTRIAN);
    let chain = MarkovChain::from_parts(dtmc, map.agents, map.env, ped_env, map.crosswalk_cell)?;
    if (0..chain.len()).any(|i| chain.labels(i) != labels[i]) {
        return Err(CliError::validation(format!(
            "{}: labels disagree with the state map",
            files.labels.display()
        )));
    }
    Ok((chain, map.classes))
}
