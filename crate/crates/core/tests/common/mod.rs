//! Shared helpers for integration tests: an independent Newton power-flow
//! oracle, random radial feeders and small training fixtures.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use voltvar::feeder::{BusId, FeederDocument, FeederModel, Injections, Line, Load, PvFarm};
use voltvar::profiles::ProfileSet;

/// Solves the nodal power balance `V_k conj((Y V)_k) = S_k` for every
/// non-source bus by Newton iteration in rectangular coordinates with a
/// central-difference Jacobian. `injections` are in kW / kVAR.
pub fn newton_voltages(model: &FeederModel, injections: &Injections) -> Vec<f64> {
    let n = model.bus_count();
    let base = model.base_power();
    let src = model.source_index();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for line in model.lines() {
        let a = model.bus_index(&line.from).unwrap();
        let b = model.bus_index(&line.to).unwrap();
        let adm = Complex64::new(1.0, 0.0) / Complex64::new(line.r_pu, line.x_pu);
        y[a][a] += adm;
        y[b][b] += adm;
        y[a][b] -= adm;
        y[b][a] -= adm;
    }
    let s: Vec<Complex64> = injections.0.iter().map(|x| x / base).collect();
    let free: Vec<usize> = (0..n).filter(|&k| k != src).collect();
    let m = free.len();
    let v0 = Complex64::new(model.source_voltage(), 0.0);

    let assemble = |x: &DVector<f64>| -> Vec<Complex64> {
        let mut v = vec![v0; n];
        for (j, &k) in free.iter().enumerate() {
            v[k] = Complex64::new(x[2 * j], x[2 * j + 1]);
        }
        v
    };
    let residual = |x: &DVector<f64>| -> DVector<f64> {
        let v = assemble(x);
        let mut r = DVector::zeros(2 * m);
        for (j, &k) in free.iter().enumerate() {
            let i_k: Complex64 = (0..n).map(|c| y[k][c] * v[c]).sum();
            let mismatch = v[k] * i_k.conj() - s[k];
            r[2 * j] = mismatch.re;
            r[2 * j + 1] = mismatch.im;
        }
        r
    };

    let mut x = DVector::from_fn(2 * m, |i, _| if i % 2 == 0 { v0.re } else { 0.0 });
    for _ in 0..50 {
        let f = residual(&x);
        if f.amax() < 1e-14 {
            break;
        }
        let h = 1e-7;
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for c in 0..2 * m {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let col = (residual(&xp) - residual(&xm)) / (2.0 * h);
            jac.set_column(c, &col);
        }
        let dx = jac.lu().solve(&(-f)).expect("Newton Jacobian is singular");
        x += dx;
    }
    assemble(&x).iter().map(|v| v.norm()).collect()
}

/// Closed-form receiving-end voltage of a two-bus line feeding a constant
/// power load `p + jq` (per unit, consumed) from a source at `v0`.
pub fn two_bus_voltage(v0: f64, r: f64, x: f64, p: f64, q: f64) -> f64 {
    let b = v0 * v0 - 2.0 * (r * p + x * q);
    let c = (r * r + x * x) * (p * p + q * q);
    ((b + (b * b - 4.0 * c).sqrt()) / 2.0).sqrt()
}

/// Random radial feeder with `n` buses; every non-source bus hangs off an
/// earlier bus and carries a load.
pub fn random_feeder<R: Rng>(rng: &mut R, n: usize) -> FeederModel {
    let buses: Vec<BusId> = (0..n).map(|k| BusId(format!("b{k}"))).collect();
    let lines = (1..n)
        .map(|k| Line {
            from: buses[rng.random_range(0..k)].clone(),
            to: buses[k].clone(),
            r_pu: rng.random_range(0.001..0.05),
            x_pu: rng.random_range(0.001..0.05),
        })
        .collect();
    let loads = (1..n)
        .map(|k| Load {
            bus: buses[k].clone(),
            p_kw: rng.random_range(0.0..800.0),
            q_kvar: rng.random_range(0.0..400.0),
            profile: "load".into(),
        })
        .collect();
    let doc = FeederDocument {
        base_power_kva: 1000.0,
        source_bus: buses[0].clone(),
        source_voltage_pu: rng.random_range(0.97..1.05),
        buses,
        lines,
        loads,
        pvs: Vec::new(),
    };
    FeederModel::from_document(doc).unwrap()
}

/// Nominal loads plus random generation (kW and either sign of kVAR) at
/// every non-source bus, so reverse power flow is covered too.
pub fn random_injections<R: Rng>(rng: &mut R, model: &FeederModel) -> Injections {
    let mut inj = nominal_injections(model);
    for k in 0..model.bus_count() {
        if k != model.source_index() {
            inj.add(k, rng.random_range(0.0..700.0), rng.random_range(-300.0..300.0));
        }
    }
    inj
}

/// Injections of the feeder's nominal loads (consumption is negative injection).
pub fn nominal_injections(model: &FeederModel) -> Injections {
    let mut inj = Injections::zeros(model);
    for (load, &bus) in model.loads().iter().zip(model.load_buses()) {
        inj.add(bus, -load.p_kw, -load.q_kvar);
    }
    inj
}

/// Three-bus chain with a load and one PV farm at the far end. Under the
/// regimes of [`toy_profiles`] the far bus is high (absorbing wins), low
/// (injecting wins) or in band (idling wins).
pub fn toy_feeder() -> FeederModel {
    let doc = FeederDocument {
        base_power_kva: 1000.0,
        source_bus: BusId("s".into()),
        source_voltage_pu: 1.02,
        buses: vec![BusId("s".into()), BusId("m".into()), BusId("f".into())],
        lines: vec![
            Line { from: BusId("s".into()), to: BusId("m".into()), r_pu: 0.02, x_pu: 0.04 },
            Line { from: BusId("m".into()), to: BusId("f".into()), r_pu: 0.02, x_pu: 0.04 },
        ],
        loads: vec![Load { bus: BusId("f".into()), p_kw: 500.0, q_kvar: 100.0, profile: "load".into() }],
        pvs: vec![PvFarm { bus: BusId("f".into()), p_rated_kw: 500.0, profile: "pv".into() }],
    };
    FeederModel::from_document(doc).unwrap()
}

pub const TOY_BLOCK: usize = 36;

/// Profiles for [`toy_feeder`]: load and PV multipliers cycling through
/// three regimes in blocks of three hours.
pub fn toy_profiles(days: usize) -> ProfileSet {
    let horizon = days * 288;
    let regimes = [(0.1, 1.0), (1.0, 0.0), (0.4, 0.5)];
    let (mut load, mut pv) = (Vec::with_capacity(horizon), Vec::with_capacity(horizon));
    for t in 0..horizon {
        let (l, p) = regimes[(t / TOY_BLOCK) % 3];
        load.push(l);
        pv.push(p);
    }
    ProfileSet::new(5, BTreeMap::from([("load".to_string(), load), ("pv".to_string(), pv)])).unwrap()
}
