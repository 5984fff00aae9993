use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, ParamBuilder, ParamId, Session};
use crate::scalar::Scalar;

use super::check_feature_map;
use super::dual::{Cam, Pam};
use super::gates::{ChannelGate, PositionGate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartAPrimary {
    Pam,
    ChannelPool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartCPrimary {
    Cam,
    PositionPool,
}

/// Which module is primary in Parts A and C; the other one gates it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MipcVariant {
    pub part_a: PartAPrimary,
    pub part_c: PartCPrimary,
}

impl Default for MipcVariant {
    fn default() -> Self {
        Self { part_a: PartAPrimary::Pam, part_c: PartCPrimary::Cam }
    }
}

impl MipcVariant {
    pub const ALL: [MipcVariant; 4] = [
        MipcVariant { part_a: PartAPrimary::Pam, part_c: PartCPrimary::Cam },
        MipcVariant { part_a: PartAPrimary::Pam, part_c: PartCPrimary::PositionPool },
        MipcVariant { part_a: PartAPrimary::ChannelPool, part_c: PartCPrimary::Cam },
        MipcVariant { part_a: PartAPrimary::ChannelPool, part_c: PartCPrimary::PositionPool },
    ];

    /// Short name listing the primaries, e.g. `pam+cam`.
    pub fn label(&self) -> String {
        let a = match self.part_a {
            PartAPrimary::Pam => "pam",
            PartAPrimary::ChannelPool => "channelpool",
        };
        let c = match self.part_c {
            PartCPrimary::Cam => "cam",
            PartCPrimary::PositionPool => "positionpool",
        };
        format!("{a}+{c}")
    }
}

/// ω = Conv1×1(Conv3×3(x) ⊙ Conv3×3(x)) with independent kernels.
#[derive(Clone, Debug)]
pub struct PartB {
    pub conv_a: Conv2d,
    pub conv_c: Conv2d,
    pub fuse: Conv2d,
}

impl PartB {
    pub fn new(pb: &mut ParamBuilder<'_>, channels: usize) -> Self {
        Self {
            conv_a: Conv2d::same(&mut pb.child("conv_a"), channels, channels, 3, true),
            conv_c: Conv2d::same(&mut pb.child("conv_c"), channels, channels, 3, true),
            fuse: Conv2d::same(&mut pb.child("fuse"), channels, channels, 1, true),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        self.forward_pair(s, x, x)
    }

    /// Two-input form: the first conv sees Part A's input, the second Part C's.
    pub fn forward_pair<T: Scalar>(&self, s: &Session<'_, T>, a: &Var<T>, c: &Var<T>) -> Result<Var<T>> {
        let w1 = self.conv_a.forward(s, a)?;
        let w2 = self.conv_c.forward(s, c)?;
        self.fuse.forward(s, &w1.mul(&w2)?)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [self.conv_a.param_ids(), self.conv_c.param_ids(), self.fuse.param_ids()].concat()
    }
}

/// Two conv/batch-norm stages with an identity shortcut and ReLU after the add.
#[derive(Clone, Debug)]
pub struct ResidualTail {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
}

impl ResidualTail {
    pub fn new(pb: &mut ParamBuilder<'_>, channels: usize) -> Self {
        Self {
            conv1: Conv2d::same(&mut pb.child("conv1"), channels, channels, 3, false),
            bn1: BatchNorm2d::new(&mut pb.child("bn1"), channels),
            conv2: Conv2d::same(&mut pb.child("conv2"), channels, channels, 3, false),
            bn2: BatchNorm2d::new(&mut pb.child("bn2"), channels),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        check_feature_map("residual_tail", x.value())?;
        let h = self.bn1.forward(s, &self.conv1.forward(s, x)?)?.relu();
        let h = self.bn2.forward(s, &self.conv2.forward(s, &h)?)?;
        Ok(h.add(x)?.relu())
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = [self.conv1.param_ids(), self.conv2.param_ids()].concat();
        for bn in [&self.bn1, &self.bn2] {
            ids.extend([bn.gamma, bn.beta, bn.running_mean, bn.running_var]);
        }
        ids
    }
}

/// The mutual-inclusion block: Residual(α + β + ω).
#[derive(Clone, Debug)]
pub struct MipcBlock {
    pub variant: MipcVariant,
    pub pam: Pam,
    pub cam: Cam,
    pub channel_gate: ChannelGate,
    pub position_gate: PositionGate,
    pub part_b: PartB,
    pub tail: ResidualTail,
    pub channels: usize,
}

/// The three branch outputs of one block evaluation.
pub struct MipcParts<T> {
    pub beta: Var<T>,
    pub omega: Var<T>,
    pub alpha: Var<T>,
}

impl MipcBlock {
    pub fn new(pb: &mut ParamBuilder<'_>, channels: usize, variant: MipcVariant) -> Self {
        Self {
            variant,
            pam: Pam::new(&mut pb.child("pam"), channels),
            cam: Cam::new(&mut pb.child("cam")),
            channel_gate: ChannelGate::new(&mut pb.child("channel_gate"), channels),
            position_gate: PositionGate::new(&mut pb.child("position_gate")),
            part_b: PartB::new(&mut pb.child("part_b"), channels),
            tail: ResidualTail::new(&mut pb.child("tail"), channels),
            channels,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        self.forward_gated(s, x, false)
    }

    /// With `gates_open`, every sigmoid gate is replaced by the constant 1.
    pub fn forward_gated<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>, gates_open: bool) -> Result<Var<T>> {
        let parts = self.parts(s, x, gates_open)?;
        let sum = parts.alpha.add(&parts.beta)?.add(&parts.omega)?;
        self.tail.forward(s, &sum)
    }

    /// β (Part A), ω (Part B) and α (Part C) before the residual tail.
    pub fn parts<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>, gates_open: bool) -> Result<MipcParts<T>> {
        let shape = check_feature_map("mipc", x.value())?;
        let gate = |g: Result<Var<T>>| -> Result<Option<Var<T>>> { if gates_open { Ok(None) } else { g.map(Some) } };
        let apply = |primary: Var<T>, gate: Option<Var<T>>| match gate {
            Some(g) => primary.mul(&g),
            None => Ok(primary),
        };
        let beta = match self.variant.part_a {
            PartAPrimary::Pam => {
                let g = gate(self.channel_gate.forward(s, x))?;
                apply(self.pam.forward(s, x)?, g)?
            }
            PartAPrimary::ChannelPool => {
                let g = gate(self.pam.forward(s, x).map(|p| p.sigmoid()))?;
                apply(self.channel_gate.logits(s, x)?, g)?
            }
        };
        let alpha = match self.variant.part_c {
            PartCPrimary::Cam => {
                let g = gate(self.position_gate.forward(s, x))?;
                apply(self.cam.forward(s, x)?, g)?
            }
            PartCPrimary::PositionPool => {
                let g = gate(self.cam.forward(s, x).map(|c| c.sigmoid()))?;
                apply(self.position_gate.logits(s, x)?, g)?
            }
        };
        let omega = self.part_b.forward(s, x)?;
        let want = [shape.0, shape.1, shape.2, shape.3];
        for (name, v) in [("beta", &beta), ("alpha", &alpha), ("omega", &omega)] {
            if v.shape() != want {
                return Err(Error::shape(
                    "mipc",
                    format!("{name} has shape {:?}, expected {want:?}; variant {} is mis-wired", v.shape(), self.variant.label()),
                ));
            }
        }
        Ok(MipcParts { beta, omega, alpha })
    }

    /// The same attention, Part B and tail parameters without the gates.
    pub fn as_pc(&self) -> PcBlock {
        PcBlock { pam: self.pam.clone(), cam: self.cam.clone(), part_b: self.part_b.clone(), tail: self.tail.clone() }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.as_pc().param_ids();
        ids.extend(self.channel_gate.param_ids());
        ids.extend(self.position_gate.param_ids());
        ids
    }
}

/// Position and channel attention used independently: Residual(PAM + CAM + ω).
#[derive(Clone, Debug)]
pub struct PcBlock {
    pub pam: Pam,
    pub cam: Cam,
    pub part_b: PartB,
    pub tail: ResidualTail,
}

impl PcBlock {
    pub fn new(pb: &mut ParamBuilder<'_>, channels: usize) -> Self {
        Self {
            pam: Pam::new(&mut pb.child("pam"), channels),
            cam: Cam::new(&mut pb.child("cam")),
            part_b: PartB::new(&mut pb.child("part_b"), channels),
            tail: ResidualTail::new(&mut pb.child("tail"), channels),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        check_feature_map("pc", x.value())?;
        let sum = self.cam.forward(s, x)?.add(&self.pam.forward(s, x)?)?.add(&self.part_b.forward(s, x)?)?;
        self.tail.forward(s, &sum)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [self.pam.param_ids(), self.cam.param_ids(), self.part_b.param_ids(), self.tail.param_ids()].concat()
    }
}

/// Skip refiner: conv→PAM→conv plus conv→CAM→conv.
#[derive(Clone, Debug)]
pub struct DaBlock {
    pub pam_in: Conv2d,
    pub pam: Pam,
    pub pam_out: Conv2d,
    pub cam_in: Conv2d,
    pub cam: Cam,
    pub cam_out: Conv2d,
}

impl DaBlock {
    pub fn new(pb: &mut ParamBuilder<'_>, channels: usize) -> Self {
        let conv = |pb: &mut ParamBuilder<'_>, name: &str| Conv2d::same(&mut pb.child(name), channels, channels, 3, true);
        Self {
            pam_in: conv(pb, "pam_in"),
            pam: Pam::new(&mut pb.child("pam"), channels),
            pam_out: conv(pb, "pam_out"),
            cam_in: conv(pb, "cam_in"),
            cam: Cam::new(&mut pb.child("cam")),
            cam_out: conv(pb, "cam_out"),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        check_feature_map("da_block", x.value())?;
        let p = self.pam_out.forward(s, &self.pam.forward(s, &self.pam_in.forward(s, x)?)?)?;
        let c = self.cam_out.forward(s, &self.cam.forward(s, &self.cam_in.forward(s, x)?)?)?;
        p.add(&c)
    }

    pub fn convs(&self) -> [&Conv2d; 4] {
        [&self.pam_in, &self.pam_out, &self.cam_in, &self.cam_out]
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.convs().iter().flat_map(|c| c.param_ids()).collect();
        ids.extend(self.pam.param_ids());
        ids.extend(self.cam.param_ids());
        ids
    }
}
