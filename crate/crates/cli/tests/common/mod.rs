#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use xseg::data::{generate_phantom, save_volume};
use xseg::network::save_checkpoint;
use xseg::{Network, NetworkConfig};

pub fn xseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xseg")).args(args).output().expect("xseg binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Phantom volumes of 90×40 slices whose images are their own masks.
pub fn mask_image_dataset(root: &Path, volumes: usize, slices: usize) {
    for v in 0..volumes {
        let mut vol = generate_phantom(100 + v as u64, slices, (90, 40)).unwrap();
        vol.images = vol.masks.iter().map(|m| m.data().iter().map(|&b| b as u8 as f32).collect()).collect();
        save_volume(&vol, &root.join(format!("vol{v:02}"))).unwrap();
    }
}

/// A one-level plain U-Net that copies the centre slice through the top
/// skip connection and thresholds it at 0.5, so on [`mask_image_dataset`]
/// its prediction is the ground truth.
pub fn oracle_network(size: (usize, usize)) -> Network<f32> {
    let cfg = NetworkConfig {
        input_size: size,
        base_filters: 1,
        depth: 1,
        convs_per_stage: 1,
        ..NetworkConfig::default()
    }
    .plain_unet();
    let mut net = Network::<f32>::build(&cfg).unwrap();
    for p in net.params_mut().iter_mut() {
        if p.name.ends_with(".weight") || p.name.ends_with(".bias") {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let set = |net: &mut Network<f32>, name: &str, i: usize, v: f32| {
        net.params_mut().by_name_mut(name).unwrap().value[i] = v;
    };
    // weights are (out, in, 3, 3); index in·9 + 4 is the centre tap
    set(&mut net, "enc0.conv0.weight", 9 + 4, 1.0);
    // the fused input is [upsampled (2 channels), skip (1 channel)]
    set(&mut net, "dec0.conv0.weight", 2 * 9 + 4, 1.0);
    set(&mut net, "head.weight", 0, 100.0);
    set(&mut net, "head.bias", 0, -50.0);
    net
}

pub fn write_oracle_checkpoint(path: &Path, size: (usize, usize)) {
    save_checkpoint(&oracle_network(size), path).unwrap();
}
