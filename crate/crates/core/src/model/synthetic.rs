use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelLabels, NoiseSpec, StateSpaceModel, DEFAULT_HORIZON};
use crate::linalg;

/// Weather channels of every synthetic building, in column order.
pub const WEATHER_LABELS: [&str; 2] = ["outdoor_temperature", "solar_irradiance"];

/// A generated building with the physical parameters it was derived from.
#[derive(Debug, Clone)]
pub struct SyntheticBuilding {
    pub model: StateSpaceModel,
    pub noise: NoiseSpec,
    /// Room heat capacities (kWh/K).
    pub room_capacity: Vec<f64>,
    /// Thermal-mass heat capacity (kWh/K).
    pub mass_capacity: f64,
}

/// Random RC building: one air node per room plus one shared thermal-mass node.
///
/// The continuous network is discretised exactly (zero-order hold) with a one hour
/// step. Noise covariances are calibrated so that the one-step output error has a
/// standard deviation near 0.1 degC and the 24-step error near 0.5 degC.
pub fn generate_synthetic_building(seed: u64, rooms: usize, coupling: f64) -> (StateSpaceModel, NoiseSpec) {
    let b = generate_detailed(seed, rooms, coupling);
    (b.model, b.noise)
}

pub fn generate_detailed(seed: u64, rooms: usize, coupling: f64) -> SyntheticBuilding {
    assert!(rooms >= 1, "a building needs at least one room");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b111_d16e);
    let ny = rooms;
    let nx = ny + 1;
    let nd = WEATHER_LABELS.len();
    let mass = ny;
    let coupling = coupling.max(0.0);

    let room_capacity: Vec<f64> = (0..ny).map(|_| rng.random_range(0.45..0.8)).collect();
    let u_out: Vec<f64> = (0..ny).map(|_| rng.random_range(0.02..0.035)).collect();
    let u_mass: Vec<f64> = (0..ny).map(|_| rng.random_range(0.08..0.15)).collect();
    let solar_area: Vec<f64> = (0..ny).map(|_| rng.random_range(0.2..0.8)).collect();
    let u_mass_out = rng.random_range(0.02..0.04);
    let mut inter = DMatrix::zeros(ny, ny);
    for i in 0..ny {
        for j in 0..i {
            let u = coupling * rng.random_range(0.01..0.03);
            inter[(i, j)] = u;
            inter[(j, i)] = u;
        }
    }
    let mut mass_capacity = rng.random_range(8.0..15.0);

    let (mut a, mut b) = discretise(&room_capacity, mass_capacity, &u_out, &u_mass, u_mass_out, &inter, &solar_area);
    for _ in 0..60 {
        let rho = linalg::spectral_radius(&a);
        if rho > 0.99 {
            mass_capacity *= 0.8;
        } else if rho < 0.92 {
            mass_capacity *= 1.25;
        } else {
            break;
        }
        (a, b) = discretise(&room_capacity, mass_capacity, &u_out, &u_mass, u_mass_out, &inter, &solar_area);
    }

    let b_d = b.columns(0, nd).into_owned();
    let b_p = b.columns(nd, ny).into_owned();
    let mut c = DMatrix::zeros(ny, nx);
    for j in 0..ny {
        c[(j, j)] = 1.0;
    }

    let model = StateSpaceModel {
        a,
        b_d,
        b_p,
        c,
        d_d: DMatrix::zeros(ny, nd),
        d_p: DMatrix::zeros(ny, ny),
        dt: 1.0,
        labels: ModelLabels {
            outputs: (1..=ny).map(|i| format!("room_{i}")).collect(),
            weather: WEATHER_LABELS.iter().map(|s| s.to_string()).collect(),
            powers: (1..=ny).map(|i| format!("heating_{i}")).collect(),
        },
    };

    let one_step_std = rng.random_range(0.08..0.12);
    let long_std = rng.random_range(0.4..0.6);
    let noise = calibrate_noise(&model, mass, one_step_std, long_std);

    SyntheticBuilding {
        model,
        noise,
        room_capacity,
        mass_capacity,
    }
}

#[allow(clippy::too_many_arguments)]
fn discretise(
    room_capacity: &[f64],
    mass_capacity: f64,
    u_out: &[f64],
    u_mass: &[f64],
    u_mass_out: f64,
    inter: &DMatrix<f64>,
    solar_area: &[f64],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let ny = room_capacity.len();
    let nx = ny + 1;
    let nd = WEATHER_LABELS.len();
    let mass = ny;
    let nu = nd + ny;
    // continuous dynamics dx/dt = F x + G u,  u = [T_out, solar, p_1..p_ny]
    let mut f = DMatrix::zeros(nx, nx);
    let mut g = DMatrix::zeros(nx, nu);
    for i in 0..ny {
        let ci = room_capacity[i];
        let mut loss = u_out[i] + u_mass[i];
        for j in 0..ny {
            if i != j {
                f[(i, j)] = inter[(i, j)] / ci;
                loss += inter[(i, j)];
            }
        }
        f[(i, i)] = -loss / ci;
        f[(i, mass)] = u_mass[i] / ci;
        f[(mass, i)] = u_mass[i] / mass_capacity;
        g[(i, 0)] = u_out[i] / ci;
        g[(i, 1)] = solar_area[i] / ci;
        g[(i, nd + i)] = 1.0 / ci;
    }
    let mass_loss: f64 = u_mass.iter().sum::<f64>() + u_mass_out;
    f[(mass, mass)] = -mass_loss / mass_capacity;
    g[(mass, 0)] = u_mass_out / mass_capacity;

    let dt = 1.0;
    let mut aug = DMatrix::zeros(nx + nu, nx + nu);
    aug.view_mut((0, 0), (nx, nx)).copy_from(&(&f * dt));
    aug.view_mut((0, nx), (nx, nu)).copy_from(&(&g * dt));
    let e = aug.exp();
    let a = e.view((0, 0), (nx, nx)).into_owned();
    let b = e.view((0, nx), (nx, nu)).into_owned();
    (a, b)
}

/// Output-error variance at step `k` for process covariance `w` (diagonal per room).
fn accumulated(model: &StateSpaceModel, w: &DMatrix<f64>, k: usize) -> DVector<f64> {
    let mut acc = DMatrix::zeros(model.ny(), model.ny());
    let mut ai = DMatrix::identity(model.nx(), model.nx());
    for _ in 0..k {
        let ca = &model.c * &ai;
        acc += &ca * w * ca.transpose();
        ai = &model.a * ai;
    }
    acc.diagonal()
}

fn calibrate_noise(model: &StateSpaceModel, mass: usize, one_step_std: f64, long_std: f64) -> NoiseSpec {
    let (nx, ny) = (model.nx(), model.ny());
    let horizon = DEFAULT_HORIZON;
    let one_var = one_step_std * one_step_std;
    let room_w = 0.4 * one_var;
    let meas_v = 0.6 * one_var;

    let mut w_rooms = DMatrix::zeros(nx, nx);
    for i in 0..ny {
        w_rooms[(i, i)] = 1.0;
    }
    let mut w_mass = DMatrix::zeros(nx, nx);
    w_mass[(mass, mass)] = 1.0;
    let from_rooms = accumulated(model, &w_rooms, horizon);
    let from_mass = accumulated(model, &w_mass, horizon);

    let target = long_std * long_std;
    let needed: f64 = (0..ny)
        .map(|j| ((target - meas_v - room_w * from_rooms[j]) / from_mass[j]).max(0.0))
        .sum::<f64>()
        / ny as f64;

    let sigma_w = w_rooms * room_w + w_mass * needed;
    let sigma_v = DMatrix::identity(ny, ny) * meas_v;
    NoiseSpec { sigma_w, sigma_v }
}
