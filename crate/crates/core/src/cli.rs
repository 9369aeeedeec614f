//! The `pachyderm` operator tool.
//!
//! Every verb is a thin wrapper over library calls; output is line-oriented
//! with a fixed field order. Exit codes: 0 success, 1 domain or usage
//! error, 2 when `verify` reports findings.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::graph;
use crate::schema::{parse_schema_text, SchemaError};
use crate::store::{OpenOptionsExt, Session};
use crate::value::Oid;

#[derive(Debug, Parser)]
#[command(
    name = "pachyderm",
    version,
    about = "Inspect, evolve and verify pachyderm stores"
)]
struct Cli {
    /// Take over a store whose lock sentinel looks live.
    #[arg(long, global = true)]
    force_unlock: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create an empty store.
    Init { path: PathBuf },
    /// Print class, object and commit counts.
    Info { path: PathBuf },
    /// List classes with their current version and slots.
    Classes { path: PathBuf },
    /// List the oids of a class.
    Extent { path: PathBuf, class: String },
    /// Print the stored record of an object.
    Show { path: PathBuf, oid: u64 },
    /// Define or redefine classes from a schema file.
    SetSchema { path: PathBuf, schema: PathBuf },
    /// Upgrade every instance of a class to its current version.
    Migrate {
        path: PathBuf,
        class: String,
        #[arg(long)]
        eager: bool,
    },
    /// Write the closure of the given objects to a graph file.
    Export {
        path: PathBuf,
        out: PathBuf,
        #[arg(required = true)]
        oids: Vec<u64>,
    },
    /// Add the objects of a graph file under fresh oids.
    Import { path: PathBuf, input: PathBuf },
    /// Rewrite the log keeping only live data.
    Compact { path: PathBuf },
    /// Check checksums, references, versions and indexes.
    Verify { path: PathBuf },
}

/// Result of one CLI invocation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CliOutput {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the tool on `argv` (including the program name).
pub fn run_cli<I, T>(argv: I) -> CliOutput
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            return if e.use_stderr() {
                CliOutput {
                    code,
                    stderr: text,
                    ..CliOutput::default()
                }
            } else {
                CliOutput {
                    code,
                    stdout: text,
                    ..CliOutput::default()
                }
            };
        }
    };
    let mut out = CliOutput::default();
    if let Err(e) = dispatch(&cli, &mut out) {
        out.code = 1;
        let _ = write!(out.stderr, "error: {e}");
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            let _ = write!(out.stderr, ": {s}");
            source = s.source();
        }
        out.stderr.push('\n');
    }
    out
}

fn open(path: &Path, cli: &Cli) -> Result<Session> {
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no store at {}", path.display()),
        )));
    }
    Session::open_with(
        path,
        OpenOptionsExt {
            force_unlock: cli.force_unlock,
        },
    )
}

fn oid(n: u64) -> Result<Oid> {
    Oid::new(n).ok_or_else(|| {
        Error::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "oid 0 is never allocated",
        ))
    })
}

fn names(set: &std::collections::BTreeSet<String>) -> String {
    if set.is_empty() {
        "-".to_owned()
    } else {
        set.iter().cloned().collect::<Vec<_>>().join(",")
    }
}

fn dispatch(cli: &Cli, out: &mut CliOutput) -> Result<()> {
    let o = &mut out.stdout;
    match &cli.command {
        Command::Init { path } => {
            if path.exists() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::AlreadyExists,
                    format!("{} already exists", path.display()),
                )));
            }
            Session::open(path)?;
            let _ = writeln!(o, "initialized {}", path.display());
        }
        Command::Info { path } => {
            let s = open(path, cli)?;
            let _ = writeln!(o, "classes: {}", s.registry().len());
            let _ = writeln!(o, "objects: {}", s.object_count());
            let _ = writeln!(o, "commits: {}", s.sequence());
        }
        Command::Classes { path } => {
            let s = open(path, cli)?;
            for name in s.registry().class_names() {
                let d = s.current_descriptor(name)?;
                let slots: Vec<&str> = d.slot_names().collect();
                let _ = writeln!(o, "{} v{} slots={}", d.name, d.version, slots.join(","));
            }
        }
        Command::Extent { path, class } => {
            let s = open(path, cli)?;
            for oid in s.extent(class)? {
                let _ = writeln!(o, "{oid}");
            }
        }
        Command::Show { path, oid: id } => {
            let mut s = open(path, cli)?;
            let h = s.lookup_instance(oid(*id)?)?;
            let record = s.record(h)?;
            let desc = s.get_descriptor(&record.class, record.version)?;
            let _ = writeln!(o, "oid: {}", record.oid);
            let _ = writeln!(o, "class: {} v{}", record.class, record.version);
            for spec in desc.slots.iter().filter(|s| s.persistent) {
                match record.slots.get(&spec.name) {
                    Some(v) => {
                        let _ = writeln!(o, "{} = {v}", spec.name);
                    }
                    None => {
                        let _ = writeln!(o, "{} unbound", spec.name);
                    }
                }
            }
        }
        Command::SetSchema { path, schema } => {
            let text = fs::read_to_string(schema)?;
            let defs = parse_schema_text(&text).map_err(|e| match e {
                SchemaError::Parse { line, reason } => Error::Schema(SchemaError::Parse {
                    line,
                    reason: format!("{}: {reason}", schema.display()),
                }),
                other => other.into(),
            })?;
            let mut s = open(path, cli)?;
            for def in defs {
                match s.current_descriptor(&def.name) {
                    Err(Error::UnknownClass(_)) => {
                        let d = s.define_class(&def.name, def.slots)?;
                        let _ = writeln!(o, "defined {} v{}", d.name, d.version);
                    }
                    Err(e) => return Err(e),
                    Ok(current) if current.same_slots(&def.slots) => {
                        let _ = writeln!(o, "unchanged {} v{}", current.name, current.version);
                    }
                    Ok(_) => {
                        let (d, diff) = s.redefine_class(&def.name, def.slots)?;
                        let _ = writeln!(
                            o,
                            "redefined {} v{} added={} discarded={} retained={}",
                            d.name,
                            d.version,
                            names(&diff.added),
                            names(&diff.discarded),
                            names(&diff.retained)
                        );
                        if !diff.discarded.is_empty() {
                            let _ = writeln!(
                                out.stderr,
                                "warning: {} v{} discards {}; CLI migrations apply defaults only",
                                d.name,
                                d.version,
                                names(&diff.discarded)
                            );
                        }
                    }
                }
            }
            s.commit()?;
        }
        Command::Migrate { path, class, eager } => {
            if !eager {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::InvalidInput,
                    "only --eager is available here; lazy migration happens on access",
                )));
            }
            let mut s = open(path, cli)?;
            let n = s.migrate_eager(class)?;
            s.commit()?;
            for d in s.take_diagnostics() {
                let _ = writeln!(out.stderr, "warning: {d}");
            }
            let _ = writeln!(o, "upgraded {n}");
        }
        Command::Export {
            path,
            out: target,
            oids,
        } => {
            let s = open(path, cli)?;
            let roots = oids.iter().map(|&n| oid(n)).collect::<Result<Vec<_>>>()?;
            let blob = graph::export_subgraph(&s, &roots)?;
            let count = graph::GraphBlob::parse(&blob)?.records.len();
            fs::write(target, blob)?;
            let _ = writeln!(o, "exported {count} objects");
        }
        Command::Import { path, input } => {
            let blob = fs::read(input)?;
            let mut s = open(path, cli)?;
            let mapping = graph::import_subgraph(&mut s, &blob)?;
            s.commit()?;
            let _ = writeln!(o, "imported {} objects", mapping.len());
            for (dense, oid) in mapping {
                let _ = writeln!(o, "{dense} -> {oid}");
            }
        }
        Command::Compact { path } => {
            let mut s = open(path, cli)?;
            let (old, new) = s.compact()?;
            let _ = writeln!(o, "compacted {old} -> {new} bytes");
        }
        Command::Verify { path } => {
            let s = open(path, cli)?;
            let report = s.verify()?;
            if report.is_clean() {
                let _ = writeln!(o, "ok");
            } else {
                for f in &report.findings {
                    let _ = writeln!(o, "{f}");
                }
                out.code = 2;
            }
        }
    }
    Ok(())
}
