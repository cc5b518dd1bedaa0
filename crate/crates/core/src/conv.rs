//! Point convolution
//! `F̃_{A,ui}^{ℓout} = Σ_B Σ_{ℓf ℓin v j k} C_ijk Y^{ℓf}_k(r̂_AB) R_uv(φ(|r_AB|)) n F_{B,vj}^{ℓin}`,
//! split into a pair kernel `K_AB` and the kernel-feature sum `Σ_B K_AB F_B`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::irreps::{cg_coefficients, selection_rule, sh_unchecked, FeatureBlock, Irreps};
use crate::radial::{CosineBasis, RadialConfig, RadialNet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvConfig {
    pub self_interaction: bool,
    pub lf_max: u32,
}

impl Default for ConvConfig {
    fn default() -> Self {
        Self {
            self_interaction: true,
            lf_max: 1,
        }
    }
}

/// One `(ℓin, ℓf) → ℓout` coupling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Path {
    pub l_in: u32,
    pub l_f: u32,
    pub l_out: u32,
    pub mul_in: usize,
    pub mul_out: usize,
    pub norm: f64,
}

impl Path {
    pub fn degrees(&self) -> (u32, u32, u32) {
        (self.l_in, self.l_f, self.l_out)
    }

    fn d_in(&self) -> usize {
        2 * self.l_in as usize + 1
    }

    fn d_out(&self) -> usize {
        2 * self.l_out as usize + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub irreps_in: Irreps,
    pub irreps_out: Irreps,
    pub paths: Vec<Path>,
    /// `n^{ℓout ℓin}`, keyed by `(ℓout, ℓin)`.
    pub norms: BTreeMap<(u32, u32), f64>,
    pub self_interaction: bool,
    pub lf_max: u32,
}

impl ConvSpec {
    /// `(mul_out, mul_in)` per path, the slot layout of the paired radial net.
    pub fn radial_layout(&self) -> Vec<(usize, usize)> {
        self.paths.iter().map(|p| (p.mul_out, p.mul_in)).collect()
    }

    pub fn num_radial_outputs(&self) -> usize {
        self.paths.iter().map(|p| p.mul_in * p.mul_out).sum()
    }

    pub fn path_degrees(&self) -> Vec<(u32, u32, u32)> {
        self.paths.iter().map(Path::degrees).collect()
    }
}

/// Enumerates every selection-rule path between the two layouts and fixes
/// `n² = 4π(2ℓout+1) / (Σ_v 1 · Σ_ℓf 1 · Σ_ℓin 1)` per `(ℓout, ℓin)`.
pub fn build_conv_spec(irreps_in: &Irreps, irreps_out: &Irreps, lf_max: u32, self_interaction: bool) -> Result<ConvSpec> {
    if lf_max > 1 {
        return Err(Error::UnsupportedDegree(lf_max));
    }
    let mut raw = Vec::new();
    for l_out in irreps_out.degrees() {
        for l_in in irreps_in.degrees() {
            for l_f in 0..=lf_max {
                if selection_rule(l_out, l_in, l_f) {
                    raw.push((l_in, l_f, l_out));
                }
            }
        }
    }
    for l_out in irreps_out.degrees() {
        if !raw.iter().any(|p| p.2 == l_out) {
            return Err(Error::UnreachableOutput(format!(
                "{}x{l_out} cannot be reached from {irreps_in} with filter degree ≤ {lf_max}",
                irreps_out.mul(l_out)
            )));
        }
    }
    let mut norms = BTreeMap::new();
    for &(l_in, _, l_out) in &raw {
        let n_filters = raw.iter().filter(|p| p.0 == l_in && p.2 == l_out).count();
        let mut inputs: Vec<u32> = raw.iter().filter(|p| p.2 == l_out).map(|p| p.0).collect();
        inputs.dedup();
        let mul = irreps_in.mul(l_in);
        let n2 = 4.0 * PI * (2 * l_out + 1) as f64 / (mul * n_filters * inputs.len()) as f64;
        norms.insert((l_out, l_in), n2.sqrt());
    }
    let paths = raw
        .into_iter()
        .map(|(l_in, l_f, l_out)| Path {
            l_in,
            l_f,
            l_out,
            mul_in: irreps_in.mul(l_in),
            mul_out: irreps_out.mul(l_out),
            norm: norms[&(l_out, l_in)],
        })
        .collect();
    Ok(ConvSpec {
        irreps_in: irreps_in.clone(),
        irreps_out: irreps_out.clone(),
        paths,
        norms,
        self_interaction,
        lf_max,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pair {
    /// Receiving atom `A`.
    pub dst: usize,
    /// Sending atom `B`.
    pub src: usize,
    pub distance: f64,
    /// `(r_B − r_A)/|r_B − r_A|`, or zero for a self pair.
    pub unit: [f64; 3],
}

/// Pairs `(A, B)` with `|r_B − r_A|` inside the basis support, grouped by
/// `A` and ordered by distance so that the per-atom sum does not depend on
/// atom labels.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborList {
    pairs: Vec<Pair>,
    num_atoms: usize,
    basis: CosineBasis,
    self_interaction: bool,
}

impl NeighborList {
    pub fn build(positions: &[[f64; 3]], basis: &CosineBasis, self_interaction: bool) -> Self {
        let cutoff = basis.support_end();
        let mut pairs = Vec::new();
        for (a, ra) in positions.iter().enumerate() {
            let start = pairs.len();
            for (b, rb) in positions.iter().enumerate() {
                if a == b && !self_interaction {
                    continue;
                }
                let d = [rb[0] - ra[0], rb[1] - ra[1], rb[2] - ra[2]];
                let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                if dist > cutoff {
                    continue;
                }
                let unit = if dist > 0.0 { d.map(|x| x / dist) } else { [0.0; 3] };
                pairs.push(Pair {
                    dst: a,
                    src: b,
                    distance: dist,
                    unit,
                });
            }
            pairs[start..].sort_by(|x, y| x.distance.total_cmp(&y.distance).then(x.src.cmp(&y.src)));
        }
        Self {
            pairs,
            num_atoms: positions.len(),
            basis: *basis,
            self_interaction,
        }
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn num_atoms(&self) -> usize {
        self.num_atoms
    }

    pub fn basis(&self) -> &CosineBasis {
        &self.basis
    }

    pub fn self_interaction(&self) -> bool {
        self.self_interaction
    }

    pub fn neighbors_of(&self, atom: usize) -> impl Iterator<Item = &Pair> {
        self.pairs.iter().filter(move |p| p.dst == atom)
    }
}

/// The five `(ℓin, ℓf, ℓout)` couplings available with degrees ≤ 1.
const PATH_TYPES: [(u32, u32, u32); 5] = [(0, 0, 0), (1, 1, 0), (0, 1, 1), (1, 0, 1), (1, 1, 1)];

fn path_type(p: (u32, u32, u32)) -> usize {
    PATH_TYPES.iter().position(|&t| t == p).expect("valid path")
}

/// Pair data shared by every convolution over the same atoms: index lists,
/// basis expansions and the angular factors `Σ_k C_ijk Y_k` per path type.
#[derive(Clone, Debug)]
pub struct PairGeometry {
    pub num_atoms: usize,
    pub dst: Rc<[usize]>,
    pub src: Rc<[usize]>,
    pub basis: CosineBasis,
    pub self_interaction: bool,
    pub basis_values: Tensor,
    /// Per path type, a `P × (d_in·d_out)` array of `d_in × d_out` matrices.
    angular: Vec<Tensor>,
}

impl PairGeometry {
    /// Concatenates neighbor lists of disjoint atom sets, offsetting indices.
    pub fn from_lists<'a>(lists: impl IntoIterator<Item = &'a NeighborList>) -> Result<Self> {
        let mut dst = Vec::new();
        let mut src = Vec::new();
        let mut dists = Vec::new();
        let mut units = Vec::new();
        let mut offset = 0;
        let mut basis = None;
        let mut self_interaction = None;
        for list in lists {
            if *basis.get_or_insert(list.basis) != list.basis || *self_interaction.get_or_insert(list.self_interaction) != list.self_interaction {
                return Err(Error::Config("neighbor lists built with different settings".into()));
            }
            for p in &list.pairs {
                dst.push(p.dst + offset);
                src.push(p.src + offset);
                dists.push(p.distance);
                units.push(p.unit);
            }
            offset += list.num_atoms;
        }
        let basis = basis.ok_or_else(|| Error::Config("no neighbor lists".into()))?;
        let basis_values = basis.expand_all(&dists)?;
        let mut angular = Vec::with_capacity(PATH_TYPES.len());
        for &(l_in, l_f, l_out) in &PATH_TYPES {
            let cg = cg_coefficients(l_out, l_in, l_f)?;
            let (di, dj, _) = cg.dims();
            let mut data = Vec::with_capacity(units.len() * di * dj);
            for u in &units {
                data.extend(cg.contract_filter(&sh_unchecked(l_f, *u)));
            }
            angular.push(Tensor::new(vec![units.len(), di * dj], data)?);
        }
        Ok(Self {
            num_atoms: offset,
            dst: dst.into(),
            src: src.into(),
            basis,
            self_interaction: self_interaction.unwrap_or(true),
            basis_values,
            angular,
        })
    }

    pub fn num_pairs(&self) -> usize {
        self.dst.len()
    }
}

/// A convolution layer: fixed path structure plus its learned radial net.
#[derive(Clone, Debug)]
pub struct Convolution {
    spec: ConvSpec,
    radial: RadialNet,
    basis: CosineBasis,
}

impl Convolution {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, prefix: &str, spec: ConvSpec, radial_cfg: &RadialConfig, rng: &mut R) -> Result<Self> {
        let basis = radial_cfg.basis()?;
        let radial = RadialNet::new(params, &format!("{prefix}.radial"), radial_cfg, spec.radial_layout(), rng);
        Ok(Self { spec, radial, basis })
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn radial(&self) -> &RadialNet {
        &self.radial
    }

    pub fn basis(&self) -> &CosineBasis {
        &self.basis
    }

    fn check_geometry(&self, geom: &PairGeometry) -> Result<()> {
        if geom.basis != self.basis {
            return Err(Error::Config(format!(
                "neighbor list built for r_max {} Å with {} bases, convolution uses r_max {} Å with {} bases",
                geom.basis.r_max(),
                geom.basis.len(),
                self.basis.r_max(),
                self.basis.len()
            )));
        }
        if geom.self_interaction != self.spec.self_interaction {
            return Err(Error::Config("neighbor list self-interaction setting differs from convolution".into()));
        }
        Ok(())
    }

    /// Radial coefficients for every pair, `[P × num_radial_outputs]`.
    pub fn coefficients<'t>(&self, tape: &'t Tape, params: &ParamSet, geom: &PairGeometry) -> Result<Var<'t>> {
        self.check_geometry(geom)?;
        let basis = tape.constant(geom.basis_values.clone());
        self.radial.forward(tape, params, basis)
    }

    pub fn forward<'t>(&self, tape: &'t Tape, params: &ParamSet, features: Var<'t>, geom: &PairGeometry) -> Result<Var<'t>> {
        let r = self.coefficients(tape, params, geom)?;
        self.contract(tape, features, geom, r)
    }

    /// `Σ_B K_AB F_B` for given radial coefficients `r: [P × num_radial_outputs]`.
    pub fn contract<'t>(&self, tape: &'t Tape, features: Var<'t>, geom: &PairGeometry, r: Var<'t>) -> Result<Var<'t>> {
        self.check_geometry(geom)?;
        let fshape = features.shape();
        if fshape.len() != 2 || fshape[0] != geom.num_atoms || fshape[1] != self.spec.irreps_in.dim() {
            return Err(Error::Layout(format!(
                "convolution expects {} atoms × {} ({}), got {:?}",
                geom.num_atoms,
                self.spec.irreps_in.dim(),
                self.spec.irreps_in,
                fshape
            )));
        }
        let rshape = r.shape();
        if rshape != [geom.num_pairs(), self.spec.num_radial_outputs()] {
            return Err(Error::Shape {
                op: "contract",
                lhs: vec![geom.num_pairs(), self.spec.num_radial_outputs()],
                rhs: rshape,
            });
        }
        let gathered = features.gather_rows(geom.src.clone())?;
        let irreps_in = &self.spec.irreps_in;
        let mut blocks: BTreeMap<u32, Var<'t>> = BTreeMap::new();
        for l in irreps_in.degrees() {
            let d = 2 * l as usize + 1;
            blocks.insert(l, gathered.slice_cols(irreps_in.offset(l), irreps_in.mul(l) * d)?);
        }
        let mut per_out: BTreeMap<u32, Var<'t>> = BTreeMap::new();
        let mut offset = 0;
        for p in &self.spec.paths {
            let (d_in, d_out) = (p.d_in(), p.d_out());
            let angular = geom.angular[path_type(p.degrees())].map(|x| x * p.norm);
            let g = blocks[&p.l_in].bmm(tape.constant(angular), p.mul_in, d_in, d_out)?;
            let coeff = r.slice_cols(offset, p.mul_out * p.mul_in)?;
            offset += p.mul_out * p.mul_in;
            let msg = coeff.bmm(g, p.mul_out, p.mul_in, d_out)?;
            let acc = match per_out.remove(&p.l_out) {
                Some(prev) => prev.add(msg)?,
                None => msg,
            };
            per_out.insert(p.l_out, acc);
        }
        let parts: Vec<Var<'t>> = per_out.into_values().collect();
        let messages = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts)? };
        messages.scatter_add_rows(geom.dst.clone(), geom.num_atoms)
    }

    /// Pair kernel `K` (`dim_out × dim_in`) for one direction and distance;
    /// differentiable with respect to the radial weights.
    pub fn kernel<'t>(&self, tape: &'t Tape, params: &ParamSet, unit: [f64; 3], distance: f64) -> Result<Var<'t>> {
        let basis = tape.constant(Tensor::new(vec![1, self.basis.len()], self.basis.expand(distance)?)?);
        let r = self.radial.forward(tape, params, basis)?;
        let (dim_out, dim_in) = (self.spec.irreps_out.dim(), self.spec.irreps_in.dim());
        let mut select = Vec::new();
        let mut factor = Vec::new();
        let mut target = Vec::new();
        let mut offset = 0;
        for p in &self.spec.paths {
            let cg = cg_coefficients(p.l_out, p.l_in, p.l_f)?;
            let m = cg.contract_filter(&sh_unchecked(p.l_f, unit));
            let (d_in, d_out) = (p.d_in(), p.d_out());
            let (o_out, o_in) = (self.spec.irreps_out.offset(p.l_out), self.spec.irreps_in.offset(p.l_in));
            for u in 0..p.mul_out {
                for v in 0..p.mul_in {
                    for i in 0..d_out {
                        for j in 0..d_in {
                            select.push(offset + u * p.mul_in + v);
                            factor.push(p.norm * m[j * d_out + i]);
                            target.push((o_out + u * d_out + i) * dim_in + o_in + v * d_in + j);
                        }
                    }
                }
            }
            offset += p.mul_out * p.mul_in;
        }
        let n = factor.len();
        let picked = r.select_cols(select.into())?;
        let weighted = picked.mul(tape.constant(Tensor::new(vec![1, n], factor)?))?;
        weighted
            .reshape(vec![n, 1])?
            .scatter_add_rows(target.into(), dim_out * dim_in)?
            .reshape(vec![dim_out, dim_in])
    }
}

/// Runs one convolution on plain arrays: builds the pair geometry from
/// `neighbors` and returns the output features.
pub fn convolve(conv: &Convolution, params: &ParamSet, features: &FeatureBlock, neighbors: &NeighborList) -> Result<FeatureBlock> {
    if features.irreps != conv.spec.irreps_in {
        return Err(Error::Layout(format!("features are {}, convolution expects {}", features.irreps, conv.spec.irreps_in)));
    }
    if *neighbors.basis() != conv.basis {
        return Err(Error::Config(format!(
            "neighbor list built with r_max {} Å, radial basis uses {} Å",
            neighbors.basis().r_max(),
            conv.basis.r_max()
        )));
    }
    let geom = PairGeometry::from_lists([neighbors])?;
    let tape = Tape::new();
    let f = tape.constant(features.values.clone());
    let out = conv.forward(&tape, params, f, &geom)?;
    let values = out.value().clone();
    FeatureBlock::new(conv.spec.irreps_out.clone(), values)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::irreps::{rotate_features, Rotation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn small_radial() -> RadialConfig {
        RadialConfig {
            num_basis: 10,
            r_max_angstrom: 4.0,
            hidden_layers: 1,
            hidden_neurons: 8,
            ..Default::default()
        }
    }

    fn random_block(rng: &mut ChaCha8Rng, irreps: &Irreps, atoms: usize) -> FeatureBlock {
        let data = (0..atoms * irreps.dim()).map(|_| rng.sample(StandardNormal)).collect();
        FeatureBlock::new(irreps.clone(), Tensor::new(vec![atoms, irreps.dim()], data).unwrap()).unwrap()
    }

    fn random_positions(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
        (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(-1.5..1.5))).collect()
    }

    #[test]
    fn scalar_only_spec_has_single_path() {
        let s = build_conv_spec(&Irreps::scalars(4), &Irreps::scalars(6), 1, true).unwrap();
        assert_eq!(s.path_degrees(), vec![(0, 0, 0)]);
        assert!((s.norms[&(0, 0)] - PI.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn mixed_spec_enumerates_all_paths() {
        let i: Irreps = "2x0+2x1".parse().unwrap();
        let s = build_conv_spec(&i, &i, 1, true).unwrap();
        assert_eq!(s.path_degrees(), vec![(0, 0, 0), (1, 1, 0), (0, 1, 1), (1, 0, 1), (1, 1, 1)]);
        // ℓout = 1 from ℓin = 1 has two filter degrees and two input degrees
        let n = s.norms[&(1, 1)];
        assert!((n * n - 4.0 * PI * 3.0 / (2.0 * 2.0 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn unreachable_output_is_reported() {
        let err = build_conv_spec(&Irreps::scalars(3), &"1x0+2x1".parse().unwrap(), 0, true).unwrap_err();
        assert!(err.to_string().contains("2x1"), "{err}");
    }

    #[test]
    fn isolated_atom_without_self_interaction_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::new();
        let irreps: Irreps = "2x0+1x1".parse().unwrap();
        let spec = build_conv_spec(&irreps, &irreps, 1, false).unwrap();
        let conv = Convolution::new(&mut params, "c", spec, &small_radial(), &mut rng).unwrap();
        let nl = NeighborList::build(&[[0.0; 3]], conv.basis(), false);
        let f = random_block(&mut rng, &irreps, 1);
        let out = convolve(&conv, &params, &f, &nl).unwrap();
        assert!(out.values.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mismatched_neighbor_basis_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::new();
        let spec = build_conv_spec(&Irreps::scalars(2), &Irreps::scalars(2), 1, true).unwrap();
        let conv = Convolution::new(&mut params, "c", spec, &small_radial(), &mut rng).unwrap();
        let other = CosineBasis::new(10, 5.0).unwrap();
        let nl = NeighborList::build(&[[0.0; 3], [1.0, 0.0, 0.0]], &other, true);
        let f = random_block(&mut rng, &Irreps::scalars(2), 2);
        assert!(matches!(convolve(&conv, &params, &f, &nl), Err(Error::Config(_))));
    }

    #[test]
    fn kernel_vanishes_beyond_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamSet::new();
        let irreps: Irreps = "2x0+1x1".parse().unwrap();
        let spec = build_conv_spec(&irreps, &irreps, 1, true).unwrap();
        let conv = Convolution::new(&mut params, "c", spec, &small_radial(), &mut rng).unwrap();
        let tape = Tape::new();
        let k = conv.kernel(&tape, &params, [0.0, 0.0, 1.0], conv.basis().support_end() + 0.01).unwrap();
        assert!(k.value().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn scalar_kernel_has_no_angular_dependence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = ParamSet::new();
        let spec = build_conv_spec(&Irreps::scalars(3), &Irreps::scalars(2), 1, true).unwrap();
        let conv = Convolution::new(&mut params, "c", spec, &small_radial(), &mut rng).unwrap();
        let tape = Tape::new();
        let k1 = conv.kernel(&tape, &params, [0.0, 0.0, 1.0], 1.3).unwrap().value().clone();
        let k2 = conv.kernel(&tape, &params, [0.6, 0.8, 0.0], 1.3).unwrap().value().clone();
        assert_eq!(k1, k2);
        assert_eq!(k1.shape(), &[2, 3]);
        // K_uv = R_uv · Y⁰ · n
        let basis = conv.basis().expand(1.3).unwrap();
        let r = crate::radial::radial_forward(conv.radial(), &tape, &params, &basis, 0, (1, 2)).unwrap().item();
        let expect = r * (4.0 * PI).sqrt().recip() * conv.spec().norms[&(0, 0)];
        assert!((k1.at(1, 2) - expect).abs() < 1e-14);
    }

    fn block_rotation(irreps: &Irreps, r: &Rotation) -> Vec<Vec<f64>> {
        let d = irreps.dim();
        let mut m = vec![vec![0.0; d]; d];
        for c in 0..d {
            let mut e = Tensor::zeros(&[1, d]);
            e.data_mut()[c] = 1.0;
            let col = crate::irreps::rotate_rows(r, irreps, &e).unwrap();
            for (row, v) in m.iter_mut().zip(col.data()) {
                row[c] = *v;
            }
        }
        m
    }

    #[test]
    fn kernel_is_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamSet::new();
        let i_in: Irreps = "2x0+2x1".parse().unwrap();
        let i_out: Irreps = "3x0+1x1".parse().unwrap();
        let spec = build_conv_spec(&i_in, &i_out, 1, true).unwrap();
        let conv = Convolution::new(&mut params, "c", spec, &small_radial(), &mut rng).unwrap();
        for _ in 0..50 {
            let r = Rotation::random(&mut rng);
            let u = {
                let v: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                v.map(|x| x / n)
            };
            let d = rng.gen_range(0.5..3.5);
            let tape = Tape::new();
            let k = conv.kernel(&tape, &params, u, d).unwrap().value().clone();
            let kr = conv.kernel(&tape, &params, r.apply(u), d).unwrap().value().clone();
            let (dout, din) = (block_rotation(&i_out, &r), block_rotation(&i_in, &r));
            for a in 0..i_out.dim() {
                for b in 0..i_in.dim() {
                    let mut s = 0.0;
                    for c in 0..i_out.dim() {
                        for e in 0..i_in.dim() {
                            s += dout[a][c] * k.at(c, e) * din[b][e];
                        }
                    }
                    assert!((kr.at(a, b) - s).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn kernel_averages_to_zero_over_weight_draws() {
        let i_in: Irreps = "2x0+1x1".parse().unwrap();
        let i_out: Irreps = "2x0+1x1".parse().unwrap();
        let spec = build_conv_spec(&i_in, &i_out, 1, true).unwrap();
        let (u, d) = ([0.48, -0.6, 0.64], 1.3);
        let draws = 4000;
        let mut mean = vec![0.0; i_out.dim() * i_in.dim()];
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..draws {
            let mut params = ParamSet::new();
            let conv = Convolution::new(&mut params, "c", spec.clone(), &small_radial(), &mut rng).unwrap();
            let tape = Tape::new();
            let k = conv.kernel(&tape, &params, u, d).unwrap().value().clone();
            for (m, v) in mean.iter_mut().zip(k.data()) {
                *m += v / draws as f64;
            }
        }
        assert!(mean.iter().all(|m| m.abs() < 0.05), "{mean:?}");
    }

    /// Direct quintuple sum over (B, path, v, j, k) as an independent route.
    fn brute_force(conv: &Convolution, params: &ParamSet, pos: &[[f64; 3]], f: &FeatureBlock) -> Vec<f64> {
        let spec = conv.spec();
        let nl = NeighborList::build(pos, conv.basis(), spec.self_interaction);
        let (dim_out, dim_in) = (spec.irreps_out.dim(), spec.irreps_in.dim());
        let mut out = vec![0.0; pos.len() * dim_out];
        for pair in nl.pairs() {
            let tape = Tape::new();
            let basis = conv.basis().expand(pair.distance).unwrap();
            let r = conv
                .radial()
                .forward(&tape, params, tape.constant(Tensor::new(vec![1, basis.len()], basis).unwrap()))
                .unwrap()
                .value()
                .clone();
            for (pi, p) in spec.paths.iter().enumerate() {
                let cg = cg_coefficients(p.l_out, p.l_in, p.l_f).unwrap();
                let y = sh_unchecked(p.l_f, pair.unit);
                let (d_out, d_in, d_f) = cg.dims();
                for u in 0..p.mul_out {
                    for i in 0..d_out {
                        let mut s = 0.0;
                        for v in 0..p.mul_in {
                            let ruv = r.data()[conv.radial().slot(pi, u, v).unwrap()];
                            for j in 0..d_in {
                                let fj = f.values.at(pair.src, spec.irreps_in.offset(p.l_in) + v * d_in + j);
                                for k in 0..d_f {
                                    s += cg.get(i, j, k) * y[k] * ruv * p.norm * fj;
                                }
                            }
                        }
                        out[pair.dst * dim_out + spec.irreps_out.offset(p.l_out) + u * d_out + i] += s;
                    }
                }
            }
        }
        let _ = dim_in;
        out
    }

    #[test]
    fn convolution_matches_brute_force_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = ParamSet::new();
        let i_in: Irreps = "3x0+2x1".parse().unwrap();
        let i_out: Irreps = "4x0+2x1".parse().unwrap();
        let spec = build_conv_spec(&i_in, &i_out, 1, true).unwrap();
        let conv = Convolution::new(&mut params, "c", spec, &small_radial(), &mut rng).unwrap();
        let pos = random_positions(&mut rng, 5);
        let f = random_block(&mut rng, &i_in, 5);
        let nl = NeighborList::build(&pos, conv.basis(), true);
        let fast = convolve(&conv, &params, &f, &nl).unwrap();
        let slow = brute_force(&conv, &params, &pos, &f);
        for (a, b) in fast.values.data().iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
        // Kernel-feature route: Σ_B K_AB F_B with the explicit kernel matrix.
        let mut via_kernel = vec![0.0; 5 * i_out.dim()];
        for p in nl.pairs() {
            let tape = Tape::new();
            let k = conv.kernel(&tape, &params, p.unit, p.distance).unwrap().value().clone();
            for a in 0..i_out.dim() {
                via_kernel[p.dst * i_out.dim() + a] += (0..i_in.dim()).map(|b| k.at(a, b) * f.values.at(p.src, b)).sum::<f64>();
            }
        }
        for (a, b) in fast.values.data().iter().zip(&via_kernel) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn convolution_is_rotation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParamSet::new();
        let i_in: Irreps = "3x0+2x1".parse().unwrap();
        let i_out: Irreps = "4x0+2x1".parse().unwrap();
        let spec = build_conv_spec(&i_in, &i_out, 1, true).unwrap();
        let conv = Convolution::new(&mut params, "c", spec, &small_radial(), &mut rng).unwrap();
        let pos = random_positions(&mut rng, 6);
        let f = random_block(&mut rng, &i_in, 6);
        let base = convolve(&conv, &params, &f, &NeighborList::build(&pos, conv.basis(), true)).unwrap();
        for _ in 0..50 {
            let r = Rotation::random(&mut rng);
            let rpos: Vec<[f64; 3]> = pos.iter().map(|p| r.apply(*p)).collect();
            let rf = rotate_features(&r, &f).unwrap();
            let lhs = convolve(&conv, &params, &rf, &NeighborList::build(&rpos, conv.basis(), true)).unwrap();
            let rhs = rotate_features(&r, &base).unwrap();
            assert!(lhs.values.max_abs_diff(&rhs.values) < 1e-9);
        }
    }

    #[test]
    fn dyadic_translation_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut params = ParamSet::new();
        let i: Irreps = "2x0+1x1".parse().unwrap();
        let spec = build_conv_spec(&i, &i, 1, true).unwrap();
        let conv = Convolution::new(&mut params, "c", spec, &small_radial(), &mut rng).unwrap();
        // coordinates on a 1/64 grid and an integer shift keep r_B − r_A exact
        let pos: Vec<[f64; 3]> = (0..5).map(|_| std::array::from_fn(|_| rng.gen_range(-96i32..96) as f64 / 64.0)).collect();
        let shifted: Vec<[f64; 3]> = pos.iter().map(|p| [p[0] + 7.0, p[1] - 3.0, p[2] + 10.0]).collect();
        let f = random_block(&mut rng, &i, 5);
        let a = convolve(&conv, &params, &f, &NeighborList::build(&pos, conv.basis(), true)).unwrap();
        let b = convolve(&conv, &params, &f, &NeighborList::build(&shifted, conv.basis(), true)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn relabeling_atoms_permutes_rows_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = ParamSet::new();
        let i: Irreps = "2x0+2x1".parse().unwrap();
        let spec = build_conv_spec(&i, &i, 1, true).unwrap();
        let conv = Convolution::new(&mut params, "c", spec, &small_radial(), &mut rng).unwrap();
        let pos = random_positions(&mut rng, 6);
        let f = random_block(&mut rng, &i, 6);
        let perm = [3, 0, 5, 1, 4, 2];
        let ppos: Vec<[f64; 3]> = perm.iter().map(|&p| pos[p]).collect();
        let rows: Vec<Vec<f64>> = perm.iter().map(|&p| f.values.row(p).to_vec()).collect();
        let pf = FeatureBlock::new(i.clone(), Tensor::from_rows(&rows).unwrap()).unwrap();
        let a = convolve(&conv, &params, &f, &NeighborList::build(&pos, conv.basis(), true)).unwrap();
        let b = convolve(&conv, &params, &pf, &NeighborList::build(&ppos, conv.basis(), true)).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(b.values.row(new), a.values.row(old));
        }
    }

    #[test]
    fn scalar_convolution_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = ParamSet::new();
        let i = Irreps::scalars(3);
        let spec = build_conv_spec(&i, &i, 1, true).unwrap();
        let conv = Convolution::new(&mut params, "c", spec, &small_radial(), &mut rng).unwrap();
        let pos = random_positions(&mut rng, 5);
        let f = random_block(&mut rng, &i, 5);
        let a = convolve(&conv, &params, &f, &NeighborList::build(&pos, conv.basis(), true)).unwrap();
        for _ in 0..10 {
            let r = Rotation::random(&mut rng);
            let rpos: Vec<[f64; 3]> = pos.iter().map(|p| r.apply(*p)).collect();
            let b = convolve(&conv, &params, &f, &NeighborList::build(&rpos, conv.basis(), true)).unwrap();
            assert!(a.values.max_abs_diff(&b.values) <= 1e-12 * a.values.max_abs());
        }
    }
}
