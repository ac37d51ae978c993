//! Synthetic ten-minute weather series with the benchmark's column layout.
//!
//! Temperature, pressure, and dew-point depression are driven by seasonal
//! and diurnal cycles plus autoregressive weather anomalies; every other
//! column is derived through the standard psychrometric relations (Magnus
//! vapour pressure, specific humidity, water-vapour concentration, potential
//! temperature, and dry-air density). The derived columns therefore carry the
//! same cross-variable dependencies as station data.

use chrono::{Duration, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, TimeSeriesTable};

pub const STEPS_PER_DAY: f64 = 144.0;
pub const STEPS_PER_YEAR: f64 = 52_560.0;
/// Length of the reference ten-minute record.
pub const DEFAULT_ROWS: usize = 52_696;

/// Column headers, in the benchmark's order.
pub const COLUMNS: [&str; 13] = [
    "p (mbar)",
    "T (degC)",
    "Tpot (K)",
    "Tdew (degC)",
    "rh (%)",
    "VPmax (mbar)",
    "VPact (mbar)",
    "VPdef (mbar)",
    "sh (g/kg)",
    "H2OC (mmol/mol)",
    "rho (g/m**3)",
    "wv (m/s)",
    "OT",
];

/// Saturation vapour pressure in mbar (Magnus formula).
pub fn saturation_pressure(t_celsius: f64) -> f64 {
    6.1078 * (17.27 * t_celsius / (t_celsius + 237.3)).exp()
}

/// First-order autoregressive process with a given correlation time (steps)
/// and stationary standard deviation.
struct Ar1 {
    phi: f64,
    noise: Normal<f64>,
    state: f64,
}

impl Ar1 {
    fn new(timescale: f64, sd: f64) -> Self {
        let phi = (-1.0 / timescale).exp();
        let innovation = sd * (1.0 - phi * phi).sqrt();
        Self {
            phi,
            noise: Normal::new(0.0, innovation).expect("positive sd"),
            state: 0.0,
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        self.state = self.phi * self.state + self.noise.sample(rng);
        self.state
    }
}

fn round_to(v: f64, digits: i32) -> f64 {
    let f = 10f64.powi(digits);
    (v * f).round() / f
}

/// Generates `rows` consecutive ten-minute observations.
pub fn generate_weather(rows: usize, seed: u64) -> Result<TimeSeriesTable, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut temp_anom = Ar1::new(2.0 * STEPS_PER_DAY, 4.0);
    let mut temp_fast = Ar1::new(6.0, 0.3);
    let mut press_anom = Ar1::new(3.0 * STEPS_PER_DAY, 7.5);
    let mut depression = Ar1::new(0.75 * STEPS_PER_DAY, 2.0);
    let mut cloud = Ar1::new(0.5 * STEPS_PER_DAY, 1.0);
    let mut wind = Ar1::new(18.0, 1.0);
    let sensor = Normal::new(0.0, 1.0).expect("unit normal");

    let start = NaiveDate::from_ymd_opt(2020, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 10, 0))
        .expect("valid start");
    let mut timestamps = Vec::with_capacity(rows);
    let mut values = Vec::with_capacity(rows * COLUMNS.len());

    for i in 0..rows {
        let t = i as f64;
        let season = (2.0 * std::f64::consts::PI * (t / STEPS_PER_YEAR - 0.3)).sin();
        let day_phase = 2.0 * std::f64::consts::PI * (t / STEPS_PER_DAY - 9.0 / 24.0);
        let cover = 1.0 / (1.0 + (-cloud.step(&mut rng)).exp());
        let diurnal = day_phase.sin() * (1.0 + 4.0 * (1.0 - 0.7 * cover));

        let temp = 9.5 + 9.0 * season + diurnal + temp_anom.step(&mut rng) + temp_fast.step(&mut rng);
        let press = 989.0 + press_anom.step(&mut rng) - 0.15 * (temp - 9.5);
        let dep = (3.5 + 0.8 * diurnal + 1.5 * (1.0 - cover) + depression.step(&mut rng)).max(0.05);
        let tdew = temp - dep;

        let vp_max = saturation_pressure(temp);
        let vp_act = saturation_pressure(tdew);
        let rh = (100.0 * vp_act / vp_max + 0.3 * sensor.sample(&mut rng)).clamp(1.0, 100.0);
        let sh = 1000.0 * 0.622 * vp_act / (press - 0.378 * vp_act);
        let h2oc = 1000.0 * vp_act / press;
        let tpot = (temp + 273.15) * (1000.0 / press).powf(0.2857);
        let rho = 100.0 * press / (287.05 * (temp + 273.15)) * 1000.0;
        let wv = (2.0 + 1.2 * wind.step(&mut rng) + 1.5 * press_anom.state.abs() / 7.5).max(0.0);

        let row = [
            round_to(press + 0.05 * sensor.sample(&mut rng), 2),
            round_to(temp, 2),
            round_to(tpot, 2),
            round_to(tdew, 2),
            round_to(rh, 2),
            round_to(vp_max, 2),
            round_to(vp_act, 2),
            round_to(vp_max - vp_act, 2),
            round_to(sh, 2),
            round_to(h2oc, 2),
            round_to(rho, 2),
            round_to(wv, 2),
            round_to(400.0 + 10.0 * sensor.sample(&mut rng), 2),
        ];
        values.extend_from_slice(&row);
        timestamps.push(
            (start + Duration::minutes(10 * i as i64))
                .format("%Y-%m-%d %H:%M:%S")
                .to_string(),
        );
    }
    TimeSeriesTable::new(
        timestamps,
        COLUMNS.iter().map(|c| (*c).to_owned()).collect(),
        values,
    )
}
