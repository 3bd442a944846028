//! Shipped experiment presets.

use serde_json::{json, Value};

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    build: fn() -> Value,
}

impl Preset {
    /// The preset as a config layer.
    pub fn config_value(&self) -> Value {
        let mut v = (self.build)();
        v["preset"] = self.name.into();
        v
    }
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "laplacian-d1",
        description: "d=1 Dirichlet Laplacian, colored noise theta=0.4, constant g, m=8 q=16; quick colored-theorem run",
        build: laplacian_d1,
    },
    Preset {
        name: "laplacian-d2",
        description: "d=2 Dirichlet Laplacian on a 63x63 grid, 16 modes, theta=0.9, constant g, m=8 q=16",
        build: laplacian_d2,
    },
    Preset {
        name: "varcoef-d1",
        description: "d=1 operator with a(x)=1+x/2, bump g, frozen exponential scheme",
        build: varcoef_d1,
    },
    Preset {
        name: "heat-white-d1-baseline",
        description: "d=1 stochastic heat with white noise (identity G), 2^13 steps, 128 points, 64 replicas; estimator calibration",
        build: heat_white_d1_baseline,
    },
    Preset {
        name: "colored-d1-thm31",
        description: "d=1 colored noise theta=0.4, bump g, m=8 q=16, 2^13 steps, 32 replicas; checked against the colored region",
        build: colored_d1_thm31,
    },
    Preset {
        name: "fractional-alpha-sweep",
        description: "d=1 fractional drift alpha in {1, 1.5, 2}, colored noise theta=0.4, constant g, 1024 points",
        build: fractional_alpha_sweep,
    },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

fn colored_noise(truncation: usize, theta: f64, g: Value) -> Value {
    json!({"theta": theta, "truncation": truncation, "g": g, "m": 8.0, "q": 16.0})
}

fn laplacian_d1() -> Value {
    json!({
        "domain": {"dim": 1, "grid_size": 127, "mode_cutoff": 127},
        "operator": {"kind": "laplacian"},
        "noise": colored_noise(127, 0.4, json!({"kind": "const", "value": 1.0})),
        "plan": {"steps": 2048, "replicas": 16, "seed": 1},
        "query": {"theorem": "colored", "q": 16.0, "theta": 0.4, "m": 8.0},
        "output_dir": "hspde-out/laplacian-d1",
    })
}

fn laplacian_d2() -> Value {
    json!({
        "domain": {"dim": 2, "grid_size": 63, "mode_cutoff": 16},
        "operator": {"kind": "laplacian"},
        "noise": colored_noise(16, 0.9, json!({"kind": "const", "value": 1.0})),
        "plan": {"steps": 1024, "replicas": 8, "seed": 2, "time_stride": 1, "space_stride": 1},
        "query": {"theorem": "colored", "q": 16.0, "theta": 0.9, "m": 8.0},
        "output_dir": "hspde-out/laplacian-d2",
    })
}

fn varcoef_d1() -> Value {
    json!({
        "domain": {"dim": 1, "grid_size": 127, "mode_cutoff": 64},
        "operator": {"kind": "affine-a"},
        "noise": colored_noise(64, 0.4, json!({"kind": "bump"})),
        "plan": {"steps": 2048, "replicas": 16, "seed": 3, "scheme": "frozen-exponential"},
        "query": {"theorem": "colored", "q": 16.0, "theta": 0.4, "m": 8.0},
        "output_dir": "hspde-out/varcoef-d1",
    })
}

fn heat_white_d1_baseline() -> Value {
    json!({
        "domain": {"dim": 1, "grid_size": 128, "mode_cutoff": 128},
        "operator": {"kind": "laplacian"},
        "noise": {"theta": 0.0, "truncation": 128, "g": {"kind": "identity"}},
        "plan": {"steps": 8192, "replicas": 64, "seed": 2024},
        "query": {"theorem": "prop32", "p": 4.0, "q": 8.0},
        "output_dir": "hspde-out/heat-white-d1-baseline",
    })
}

fn colored_d1_thm31() -> Value {
    json!({
        "domain": {"dim": 1, "grid_size": 128, "mode_cutoff": 128},
        "operator": {"kind": "laplacian"},
        "noise": colored_noise(128, 0.4, json!({"kind": "bump"})),
        "plan": {"steps": 8192, "replicas": 32, "seed": 31},
        "query": {"theorem": "colored", "q": 16.0, "theta": 0.4, "m": 8.0},
        "output_dir": "hspde-out/colored-d1-thm31",
    })
}

fn fractional_alpha_sweep() -> Value {
    json!({
        "domain": {"dim": 1, "grid_size": 1024, "mode_cutoff": 1024},
        "operator": {"kind": "laplacian"},
        "noise": colored_noise(1024, 0.4, json!({"kind": "const", "value": 1.0})),
        "plan": {"steps": 8192, "replicas": 32, "seed": 7, "space_stride": 16},
        "alpha_sweep": [1.0, 1.5, 2.0],
        // p is the colored-noise exponent 1/(1/2 - 0.4 + 1/8)
        "query": {"theorem": "fractional", "p": 40.0 / 9.0, "q": 16.0},
        "output_dir": "hspde-out/fractional-alpha-sweep",
    })
}
