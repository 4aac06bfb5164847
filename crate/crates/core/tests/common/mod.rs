#![allow(dead_code)]

use std::sync::OnceLock;

use rayon::prelude::*;

use hw_core::diagnostics::DiagnosticsBundle;
use hw_core::fss::FundamentalSystem;
use hw_core::problem::ProblemSpec;
use hw_core::sweep::Family;

pub struct Instance {
    pub family: Family,
    pub params: Vec<f64>,
    pub problem: ProblemSpec,
    pub fss: FundamentalSystem,
    pub diag: DiagnosticsBundle,
}

pub fn instance(family: Family, params: &[f64], horizon: Option<usize>) -> Instance {
    let mut problem = family.problem(params).unwrap();
    if let Some(h) = horizon {
        problem.horizon = Some(h);
    }
    let fss = FundamentalSystem::build(&problem).unwrap();
    let diag = DiagnosticsBundle::compute(&problem, &fss).unwrap();
    Instance {
        family,
        params: params.to_vec(),
        problem,
        fss,
        diag,
    }
}

/// Every cell of the three canonical grids at default horizons, computed once.
pub fn grid_instances() -> &'static [Instance] {
    static CELLS: OnceLock<Vec<Instance>> = OnceLock::new();
    CELLS.get_or_init(|| {
        let jobs: Vec<(Family, Vec<f64>)> = Family::ALL
            .iter()
            .flat_map(|&f| f.canonical_grid().into_iter().map(move |p| (f, p)))
            .collect();
        jobs.par_iter().map(|(f, p)| instance(*f, p, None)).collect()
    })
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
