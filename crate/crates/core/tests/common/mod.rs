//! Independent reference evaluations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reusim::cost_model::{CostContext, CostOptions, SoftmaxUnitParams, TbAccounting};
use reusim::workload::ModelConfig;
use reusim::xbar_map::{DeviceAssignment, DeviceKind, DeviceParams, MappingOptions, TileConfig};

/// Crossbars needed by counting every xbar-sized window that touches the matrix.
pub fn brute_force_tiles(in_dim: usize, out_dim: usize, xbar: usize) -> u64 {
    let mut n = 0;
    let mut r = 0;
    while r < in_dim {
        let mut c = 0;
        while c < out_dim {
            n += 1;
            c += xbar;
        }
        r += xbar;
    }
    n
}

/// Evaluates the cost equations by hand from the configuration alone.
pub struct Oracle {
    pub cfg: ModelConfig,
    pub dev: DeviceParams,
    pub tiles: TileConfig,
    pub sm: SoftmaxUnitParams,
    pub pad: bool,
    pub serial: bool,
}

#[derive(Default, Clone, Copy)]
pub struct Terms {
    pub e: f64,
    pub d: f64,
    pub a: f64,
}

impl Terms {
    fn add(self, o: Terms) -> Terms {
        Terms {
            e: self.e + o.e,
            d: self.d + o.d,
            a: self.a + o.a,
        }
    }
}

fn ceil_div(a: usize, b: usize) -> usize {
    (a + b - 1) / b
}

impl Oracle {
    fn slices(&self) -> f64 {
        ceil_div(self.cfg.weight_bits as usize, self.dev.bits_per_cell as usize) as f64
    }

    fn cycles(&self) -> f64 {
        if self.serial {
            (self.cfg.input_bits / self.cfg.input_split_bits) as f64
        } else {
            1.0
        }
    }

    fn area(&self, xbars: f64) -> f64 {
        let per_tile = (self.tiles.n_x_pe * self.tiles.n_pe_tile) as f64;
        let x = if self.pad { (xbars / per_tile).ceil() * per_tile } else { xbars };
        x * self.dev.area_mm2
    }

    /// Static-weight layer: read energy and delay, area.
    pub fn fc(&self, i: usize, o: usize, t_l: usize) -> Terms {
        let x = self.tiles.xbar_size;
        let n = (ceil_div(i, x) * ceil_div(o, x)) as f64 * self.slices();
        let pe = self.tiles.n_x_pe as f64;
        Terms {
            e: t_l as f64 * n * self.dev.e_read_pj * 1e-9 * self.cycles(),
            d: t_l as f64 * self.dev.d_read_us * 1e-3 * pe * self.cycles(),
            a: self.area(n),
        }
    }

    /// Dynamic matmul per head, `h` heads in parallel: read plus write.
    pub fn mm(&self, i: usize, o: usize, h: usize) -> Terms {
        let x = self.tiles.xbar_size;
        let n = (ceil_div(i, x) * ceil_div(o, x)) as f64 * self.slices() * h as f64;
        let t = self.cfg.t as f64;
        let pe = self.tiles.n_x_pe as f64;
        Terms {
            e: (t * n * self.dev.e_read_pj * self.cycles() + n * self.dev.e_write_pj) * 1e-9,
            d: (t * self.dev.d_read_us * pe * self.cycles() + self.dev.d_write_us * pe) * 1e-3,
            a: self.area(n),
        }
    }

    pub fn softmax(&self) -> Terms {
        let t2 = (self.cfg.t * self.cfg.t) as f64;
        let per_e = self.sm.e_select_pj + self.sm.e_exponent_pj + self.sm.e_div_pj;
        let per_d = self.sm.d_select_ns + self.sm.d_exponent_ns + self.sm.d_div_ns;
        Terms {
            e: self.cfg.n_heads as f64 * t2 * per_e * 1e-9,
            d: t2 * per_d * 1e-6,
            a: 0.0,
        }
    }

    pub fn attention(&self) -> Terms {
        let c = &self.cfg;
        let dh = c.d / c.n_heads;
        [
            self.fc(c.d, c.d, c.t),
            self.fc(c.d, c.d, c.t),
            self.fc(c.d, c.d, c.t),
            self.mm(dh, c.t, c.n_heads),
            self.mm(c.t, dh, c.n_heads),
            self.softmax(),
        ]
        .into_iter()
        .fold(Terms::default(), Terms::add)
    }

    pub fn proj_mlp(&self) -> Terms {
        let c = &self.cfg;
        let hid = (c.d as f64 * c.mlp_ratio).round() as usize;
        self.fc(c.d, c.d, c.t)
            .add(self.fc(c.d, hid, c.t))
            .add(self.fc(hid, c.d, c.t))
    }

    /// (energy mJ, delay ms, area mm²).
    pub fn total(&self, n_reuse: usize, charge_tb: bool) -> (f64, f64, f64) {
        let n = self.cfg.n_encoders as f64;
        let r = n_reuse as f64;
        let (at, pm) = (self.attention(), self.proj_mlp());
        let tb = self.fc(self.cfg.d, self.cfg.d, self.cfg.t);
        let k = if charge_tb { r } else { 0.0 };
        let mut e = n * pm.e + (n - r) * at.e + k * tb.e;
        let mut d = n * pm.d + (n - r) * at.d + k * tb.d;
        let mut a = n * pm.a + (n - r) * at.a + k * tb.a;
        if self.cfg.include_stem {
            for s in [self.fc(self.cfg.patch_dim, self.cfg.d, self.cfg.t), self.fc(self.cfg.d, self.cfg.n_classes, 1)] {
                e += s.e;
                d += s.d;
                a += s.a;
            }
        }
        (e, d, a)
    }

    pub fn context(&self, tb: TbAccounting) -> CostContext {
        CostContext {
            devices: DeviceAssignment::uniform(self.dev.clone()),
            tiles: self.tiles.clone(),
            softmax: self.sm.clone(),
            opts: CostOptions {
                mapping: MappingOptions {
                    tile_padding: self.pad,
                    differential_columns: false,
                },
                input_serialization: self.serial,
                tb_accounting: tb,
                ..CostOptions::default()
            },
        }
    }
}

/// A random but valid model / device / tile configuration and a reuse count.
pub fn random_case(rng: &mut ChaCha8Rng) -> (Oracle, usize) {
    let heads = [1, 2, 3, 4, 6, 8][rng.random_range(0..6)];
    let n_enc = rng.random_range(1..14);
    let cfg = ModelConfig {
        name: "random".into(),
        d: heads * rng.random_range(4..48) * 2,
        t: rng.random_range(1..300),
        mlp_ratio: [2.0, 3.0, 4.0][rng.random_range(0..3)],
        n_encoders: n_enc,
        n_heads: heads,
        weight_bits: rng.random_range(1..10),
        input_bits: 8,
        input_split_bits: [1, 2, 4, 8][rng.random_range(0..4)],
        include_stem: rng.random_bool(0.5),
        patch_dim: rng.random_range(16..800),
        n_classes: rng.random_range(2..1200),
    };
    let dev = DeviceParams {
        kind: DeviceKind::Fefet,
        bits_per_cell: rng.random_range(1..4),
        e_read_pj: rng.random_range(1.0..50.0),
        e_write_pj: rng.random_range(1.0..200.0),
        d_read_us: rng.random_range(0.001..0.1),
        d_write_us: rng.random_range(0.01..5.0),
        area_mm2: rng.random_range(0.001..0.1),
        read_var: 0.1,
        write_var: 0.2,
        r_on_ohm: 1e5,
        r_off_ohm: 1e7,
    };
    let tiles = TileConfig {
        xbar_size: [16, 32, 64, 128][rng.random_range(0..4)],
        n_x_pe: rng.random_range(1..16),
        n_pe_tile: rng.random_range(1..16),
        adc_bits: 6,
    };
    let sm = SoftmaxUnitParams::from_totals(rng.random_range(0.0..10.0), rng.random_range(0.0..20.0), [1.0, 2.0, 1.0]);
    let n_reuse = rng.random_range(0..n_enc);
    let pad = rng.random_bool(0.5);
    let serial = rng.random_bool(0.5);
    (
        Oracle {
            cfg,
            dev,
            tiles,
            sm,
            pad,
            serial,
        },
        n_reuse,
    )
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// Softmax written the textbook way, for inputs small enough not to overflow.
pub fn naive_softmax(x: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Linear CKA from the centered Gram matrices, computed without the library.
pub fn cka_reference(a: &ndarray::Array2<f64>, b: &ndarray::Array2<f64>) -> f64 {
    let center = |m: &ndarray::Array2<f64>| {
        let mean = m.mean_axis(ndarray::Axis(0)).unwrap();
        m - &mean
    };
    let (a, b) = (center(a), center(b));
    let ka = a.dot(&a.t());
    let kb = b.dot(&b.t());
    let hsic = |x: &ndarray::Array2<f64>, y: &ndarray::Array2<f64>| (x * y).sum();
    hsic(&ka, &kb) / (hsic(&ka, &ka).sqrt() * hsic(&kb, &kb).sqrt())
}
