use clap::Args;
use serde::Serialize;
use vnet_core::{AlgVec, AlgebraTensor};

use crate::error::CliResult;
use crate::{json_out, Globals};

#[derive(Debug, Args)]
pub struct AlgebraArgs {
    /// Built-in name (real, quaternion, coquaternion, tessarine,
    /// hyperbolic_quaternion) or a path to an algebra JSON file.
    pub algebra: String,
}

#[derive(Serialize)]
struct Report {
    name: Option<String>,
    dim: usize,
    /// `table[i][j]` holds the coordinates of `e_i × e_j`.
    table: Vec<Vec<Vec<f64>>>,
    identity: Option<usize>,
    commutative: bool,
    associative: bool,
    commutativity_witness: Option<String>,
    associativity_witness: Option<String>,
}

/// `e_i`-combination text, e.g. `-e2`, `e1+0.5e3`, `0`.
pub fn format_vec(v: &AlgVec) -> String {
    let mut s = String::new();
    for (k, &c) in v.coords().iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let sign = if c < 0.0 { "-" } else if s.is_empty() { "" } else { "+" };
        let mag = c.abs();
        let coef = if mag == 1.0 { String::new() } else { format!("{mag}") };
        s.push_str(&format!("{sign}{coef}e{k}"));
    }
    if s.is_empty() {
        s.push('0');
    }
    s
}

pub fn run(args: &AlgebraArgs, g: &Globals) -> CliResult {
    let alg = AlgebraTensor::resolve(&args.algebra)?;
    let d = alg.dim();
    let mut cells = vec![vec![AlgVec::zeros(d); d]; d];
    for (i, row) in cells.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = alg.multiply(&AlgVec::basis(d, i), &AlgVec::basis(d, j))?;
        }
    }
    let props = alg.properties();
    let comm_w = props.commutative.as_ref().map(|w| {
        format!(
            "e{i}×e{j} = {} but e{j}×e{i} = {}",
            format_vec(&w.ij),
            format_vec(&w.ji),
            i = w.i,
            j = w.j
        )
    });
    let assoc_w = props.associative.as_ref().map(|w| {
        format!(
            "(e{i}×e{j})×e{k} = {} but e{i}×(e{j}×e{k}) = {}",
            format_vec(&w.left),
            format_vec(&w.right),
            i = w.i,
            j = w.j,
            k = w.k
        )
    });

    if g.json {
        return json_out(&Report {
            name: alg.name().map(str::to_string).or_else(|| Some(args.algebra.clone())),
            dim: d,
            table: cells.iter().map(|r| r.iter().map(|c| c.coords().to_vec()).collect()).collect(),
            identity: props.identity,
            commutative: props.is_commutative(),
            associative: props.is_associative(),
            commutativity_witness: comm_w,
            associativity_witness: assoc_w,
        });
    }

    println!("algebra: {}", alg.name().unwrap_or(&args.algebra));
    println!("dim: {d}");
    println!("multiplication table (row × column):");
    let text: Vec<Vec<String>> = cells.iter().map(|r| r.iter().map(format_vec).collect()).collect();
    let width = text.iter().flatten().map(String::len).max().unwrap_or(1).max(2 + d.to_string().len());
    let mut header = format!("{:>w$} |", "×", w = width);
    for j in 0..d {
        header.push_str(&format!(" {:>w$}", format!("e{j}"), w = width));
    }
    println!("{header}");
    println!("{}", "-".repeat(header.chars().count()));
    for (i, row) in text.iter().enumerate() {
        let mut line = format!("{:>w$} |", format!("e{i}"), w = width);
        for cell in row {
            line.push_str(&format!(" {cell:>width$}"));
        }
        println!("{line}");
    }
    match props.identity {
        Some(i) => println!("identity: e{i} (two-sided)"),
        None => println!("identity: none among the basis elements"),
    }
    match &comm_w {
        None => println!("commutative: yes"),
        Some(w) => println!("commutative: no ({w})"),
    }
    match &assoc_w {
        None => println!("associative: yes"),
        Some(w) => println!("associative: no ({w})"),
    }
    Ok(())
}
