//! The reconstruction network: a U-net with five (configurable) contracting
//! blocks, a bottleneck, five expanding blocks joined by skip merges, and a
//! sigmoid head, built from same-padding 3x3 convolutions.

use rand::Rng;

use crate::autodiff::{Graph, NodeId, Parameter, Scalar, Tensor};
use crate::data::derive_rng;
use crate::error::{Error, Result};

/// Architecture parameters. The paper-scale network is `n = 512`; the desk
/// scale defaults to `n = 64` with 16 base filters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UNetConfig {
    /// Input/output side in pixels; a power of two.
    pub n: usize,
    /// Number of pooling levels.
    pub depth: usize,
    /// Channels of the first block; doubled at every level.
    pub base_filters: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            n: 64,
            depth: 5,
            base_filters: 16,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_filters == 0 {
            return Err(Error::Config("base_filters must be at least 1".into()));
        }
        if self.depth == 0 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if !self.n.is_power_of_two() {
            return Err(Error::Config(format!(
                "input side must be a power of two, got {}",
                self.n
            )));
        }
        if self.n >> self.depth < 2 {
            return Err(Error::Config(format!(
                "input side {} leaves less than 2 pixels after {} poolings",
                self.n, self.depth
            )));
        }
        Ok(())
    }

    fn filters(&self, level: usize) -> usize {
        self.base_filters << level
    }
}

/// Ordered parameter names and shapes for a configuration. Kernel shapes are
/// `[Cout, Cin, k, k]`, biases `[Cout]`.
pub fn param_specs(config: &UNetConfig) -> Vec<(String, Vec<usize>)> {
    let mut specs = Vec::new();
    let mut conv = |name: String, cin: usize, cout: usize, k: usize| {
        specs.push((format!("{name}.weight"), vec![cout, cin, k, k]));
        specs.push((format!("{name}.bias"), vec![cout]));
    };
    for i in 0..config.depth {
        let cin = if i == 0 { 1 } else { config.filters(i - 1) };
        let c = config.filters(i);
        conv(format!("enc{i}.conv1"), cin, c, 3);
        conv(format!("enc{i}.conv2"), c, c, 3);
    }
    let cb = config.filters(config.depth);
    conv(
        "bottleneck.conv1".into(),
        config.filters(config.depth - 1),
        cb,
        3,
    );
    conv("bottleneck.conv2".into(), cb, cb, 3);
    for i in (0..config.depth).rev() {
        let c = config.filters(i);
        conv(format!("dec{i}.up"), config.filters(i + 1), c, 3);
        conv(format!("dec{i}.conv1"), 2 * c, c, 3);
        conv(format!("dec{i}.conv2"), c, c, 3);
    }
    conv("head.conv".into(), config.base_filters, 1, 1);
    specs
}

/// Total parameter count for a configuration.
pub fn param_count(config: &UNetConfig) -> usize {
    param_specs(config)
        .iter()
        .map(|(_, shape)| shape.iter().product::<usize>())
        .sum()
}

/// The learned mapping from speckle to object.
#[derive(Clone, Debug)]
pub struct UNetModel<E: Scalar> {
    pub config: UNetConfig,
    pub params: Vec<Parameter<E>>,
}

/// Records the U-net forward pass on `graph`. `param_ids` must follow the
/// [`param_specs`] order.
pub fn wire_forward<E: Scalar>(
    graph: &mut Graph<E>,
    config: &UNetConfig,
    param_ids: &[NodeId],
    input: NodeId,
) -> Result<NodeId> {
    let expected = param_specs(config).len();
    if param_ids.len() != expected {
        return Err(Error::State(format!(
            "wire_forward needs {expected} parameter nodes, got {}",
            param_ids.len()
        )));
    }
    let mut next = param_ids.iter().copied();
    let mut conv_block = move |g: &mut Graph<E>, x: NodeId, k: usize| -> Result<NodeId> {
        let weight = next.next().expect("checked length");
        let bias = next.next().expect("checked length");
        g.conv2d(x, weight, bias, (k - 1) / 2)
    };

    let mut x = input;
    let mut skips = Vec::with_capacity(config.depth);
    for _ in 0..config.depth {
        x = conv_block(graph, x, 3)?;
        x = graph.relu(x);
        x = conv_block(graph, x, 3)?;
        x = graph.relu(x);
        skips.push(x);
        x = graph.maxpool2d(x)?;
    }
    x = conv_block(graph, x, 3)?;
    x = graph.relu(x);
    x = conv_block(graph, x, 3)?;
    x = graph.relu(x);
    for i in (0..config.depth).rev() {
        x = graph.upsample_nearest2x(x)?;
        x = conv_block(graph, x, 3)?;
        x = graph.concat_channels(x, skips[i])?;
        x = conv_block(graph, x, 3)?;
        x = graph.relu(x);
        x = conv_block(graph, x, 3)?;
        x = graph.relu(x);
    }
    x = conv_block(graph, x, 1)?;
    Ok(graph.sigmoid(x))
}

/// Searches successive seeds for a random (parameters, input, target)
/// instance whose forward pass keeps a `margin` distance from every relu
/// kink and pooling tie, so central finite differences stay on one smooth
/// branch. Returns the parameter tensors with the input appended, plus the
/// BCE target.
pub fn kink_safe_instance(
    config: &UNetConfig,
    seed_start: u64,
    margin: f64,
) -> Option<(Vec<Tensor<f64>>, Tensor<f64>)> {
    use crate::autodiff::gradcheck::random_tensor;
    for seed in seed_start..seed_start + 64 {
        let model = UNetModel::<f64>::build(*config, seed).ok()?;
        let mut rng = derive_rng(seed ^ 0x9e37_79b9, 1);
        let input = random_tensor(&mut rng, &[1, 1, config.n, config.n], 0.0, 1.0);
        let target = random_tensor(&mut rng, &[1, 1, config.n, config.n], 0.05, 0.95);
        let mut graph = Graph::new();
        let param_ids: Vec<NodeId> = model
            .params
            .iter()
            .enumerate()
            .map(|(slot, p)| graph.param(slot, p.value.clone()))
            .collect();
        let input_id = graph.var(input.clone());
        let out = wire_forward(&mut graph, config, &param_ids, input_id).ok()?;
        let t = graph.leaf(target.clone());
        graph.bce_loss(out, t).ok()?;
        if graph.kink_margin() >= margin {
            let mut inputs: Vec<Tensor<f64>> =
                model.params.iter().map(|p| p.value.clone()).collect();
            inputs.push(input);
            return Some((inputs, target));
        }
    }
    None
}

impl<E: Scalar> UNetModel<E> {
    /// Builds a freshly initialized model: He-uniform kernels
    /// (`bound = sqrt(6 / fan_in)`), zero biases, all draws seeded.
    pub fn build(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = derive_rng(seed, 0);
        let params = param_specs(&config)
            .into_iter()
            .map(|(name, shape)| {
                let tensor = if shape.len() == 4 {
                    let fan_in = shape[1] * shape[2] * shape[3];
                    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                    let data = (0..shape.iter().product::<usize>())
                        .map(|_| E::from_f64(rng.gen_range(-bound..bound)))
                        .collect();
                    Tensor::from_vec(&shape, data).expect("shape matches count")
                } else {
                    Tensor::zeros(&shape)
                };
                Parameter::new(name, tensor)
            })
            .collect();
        Ok(UNetModel { config, params })
    }

    fn check_batch(&self, batch: &Tensor<E>) -> Result<()> {
        let (_, c, h, w) = batch.dims4()?;
        if c != 1 || h != self.config.n || w != self.config.n {
            return Err(Error::shape(
                "UNetModel::forward",
                format!(
                    "expected [B, 1, {0}, {0}] input, got {1:?}",
                    self.config.n,
                    batch.shape()
                ),
            ));
        }
        Ok(())
    }

    /// Records a forward pass and returns the graph plus the output node.
    /// Parameter node slots follow `self.params` order.
    pub fn forward_graph(&self, batch: &Tensor<E>) -> Result<(Graph<E>, NodeId)> {
        self.check_batch(batch)?;
        let mut graph = Graph::new();
        let param_ids: Vec<NodeId> = self
            .params
            .iter()
            .enumerate()
            .map(|(slot, p)| graph.param(slot, p.value.clone()))
            .collect();
        let input = graph.leaf(batch.clone());
        let out = wire_forward(&mut graph, &self.config, &param_ids, input)?;
        Ok((graph, out))
    }

    /// Inference-only forward pass.
    pub fn forward(&self, batch: &Tensor<E>) -> Result<Tensor<E>> {
        let (graph, out) = self.forward_graph(batch)?;
        Ok(graph.value(out).clone())
    }
}


#[cfg(test)]
mod scratch {
    use super::*;
    use crate::autodiff::gradcheck::{check_gradients, random_tensor};

    #[test]
    fn probe_random_bias_instances() {
        let config = UNetConfig { n: 16, depth: 2, base_filters: 1 };
        for seed in 0..12u64 {
            let mut rng = derive_rng(seed, 7);
            let specs = param_specs(&config);
            let params: Vec<Tensor<f64>> = specs.iter().map(|(_, shape)| {
                let fan = if shape.len() == 4 { shape[1]*shape[2]*shape[3] } else { 1 };
                let bound = (6.0 / fan as f64).sqrt().min(0.8);
                random_tensor(&mut rng, shape, -bound, bound)
            }).collect();
            let input = random_tensor(&mut rng, &[1,1,16,16], 0.0, 1.0);
            let target = random_tensor(&mut rng, &[1,1,16,16], 0.05, 0.95);
            // measure margin
            let mut g = Graph::new();
            let ids: Vec<NodeId> = params.iter().map(|t| g.var(t.clone())).collect();
            let x = g.leaf(input.clone());
            let out = wire_forward(&mut g, &config, &ids, x).unwrap();
            let t = g.leaf(target.clone());
            let _ = g.bce_loss(out, t).unwrap();
            let margin = g.kink_margin();
            let mut inputs = params.clone();
            inputs.push(input);
            let t2 = target.clone();
            let checks = check_gradients(&inputs, 1e-3, move |g, ids| {
                let (p, rest) = ids.split_at(ids.len()-1);
                let out = wire_forward(g, &config, p, rest[0])?;
                let t = g.leaf(t2.clone());
                g.bce_loss(out, t)
            }).unwrap();
            let worst = checks.iter().map(|c| c.rel_err).fold(0.0f64, f64::max);
            println!("seed {seed}: margin {margin:.2e} worst rel {worst:.3e} {}", if worst < 1e-3 {"OK"} else {"FAIL"});
        }
    }

    #[test]
    fn probe_depth2_detail() {
        let config = UNetConfig { n: 16, depth: 2, base_filters: 1 };
        let model = UNetModel::<f64>::build(config, 21).unwrap();
        let mut rng = derive_rng(500, 0);
        let input = random_tensor(&mut rng, &[1, 1, 16, 16], 0.0, 1.0);
        let target = random_tensor(&mut rng, &[1, 1, 16, 16], 0.0, 1.0);
        let eval = |params: &[Tensor<f64>], input: &Tensor<f64>| -> (f64, Graph<f64>, Vec<NodeId>) {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = params.iter().map(|t| g.var(t.clone())).collect();
            let x = g.leaf(input.clone());
            let out = wire_forward(&mut g, &config, &ids, x).unwrap();
            let t = g.leaf(target.clone());
            let loss = g.bce_loss(out, t).unwrap();
            let v = g.value(loss).scalar_value().unwrap();
            (v, g, ids)
        };
        let params: Vec<Tensor<f64>> = model.params.iter().map(|p| p.value.clone()).collect();
        let (_, mut g0, ids) = eval(&params, &input);
        let loss_id = NodeId_last(&g0);
        let _ = loss_id;
        // backward via the recorded graph
        let mut g = Graph::new();
        let vids: Vec<NodeId> = params.iter().map(|t| g.var(t.clone())).collect();
        let x = g.leaf(input.clone());
        let out = wire_forward(&mut g, &config, &vids, x).unwrap();
        let t = g.leaf(target.clone());
        let loss = g.bce_loss(out, t).unwrap();
        g.backward(loss).unwrap();
        let _ = &mut g0;
        for which in [4usize, 23] {
            println!("param {which} = {}", model.params[which].name);
            let analytic = g.grad(vids[which]).unwrap().clone();
            for i in 0..analytic.numel().min(4) {
                let h = 1e-6;
                let mut pp = params.clone();
                let orig = pp[which].data()[i];
                pp[which].data_mut()[i] = orig + h;
                let (up, _, _) = eval(&pp, &input);
                pp[which].data_mut()[i] = orig - h;
                let (down, _, _) = eval(&pp, &input);
                let num = (up - down) / (2.0 * h);
                println!("  [{i}] analytic {:+.9e} numeric {:+.9e}", analytic.data()[i], num);
            }
        }
    }

    fn NodeId_last(_g: &Graph<f64>) -> usize { 0 }

    #[test]
    fn probe_bisect() {
        let mut rng = derive_rng(901, 0);
        // depth-1 unet pieces at n=8, base=1: enc conv1/conv2, bottleneck c1/c2, up, dec c1/c2, head
        let shapes: Vec<Vec<usize>> = vec![
            vec![1,1,3,3], vec![1], vec![1,1,3,3], vec![1],      // enc0
            vec![2,1,3,3], vec![2], vec![2,2,3,3], vec![2],      // bottleneck
            vec![1,2,3,3], vec![1],                              // up
            vec![1,2,3,3], vec![1], vec![1,1,3,3], vec![1],      // dec0
            vec![1,1,1,1], vec![1],                              // head
        ];
        let mut inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random_tensor(&mut rng, s, -0.5, 0.5)).collect();
        inputs.push(random_tensor(&mut rng, &[1,1,8,8], 0.1, 1.0));
        let target = random_tensor(&mut rng, &[1,1,8,8], 0.1, 0.9);
        for stage in 1..=6 {
            let t2 = target.clone();
            let checks = check_gradients(&inputs, 1e-5, move |g, ids| {
                let x = ids[16];
                let mut conv = |g: &mut Graph<f64>, x, wi: usize, pad| g.conv2d(x, ids[wi], ids[wi+1], pad);
                // stage 1: enc convs only
                let mut h = conv(g, x, 0, 1)?; h = g.relu(h);
                h = conv(g, h, 2, 1)?; h = g.relu(h);
                let skip = h;
                if stage >= 2 { h = g.maxpool2d(skip)?; h = conv(g, h, 4, 1)?; h = g.relu(h); h = conv(g, h, 6, 1)?; h = g.relu(h); }
                if stage >= 3 { h = g.upsample_nearest2x(h)?; h = conv(g, h, 8, 1)?; }
                if stage >= 4 { h = g.concat_channels(h, skip)?; h = conv(g, h, 10, 1)?; h = g.relu(h); h = conv(g, h, 12, 1)?; h = g.relu(h); }
                if stage >= 5 { h = conv(g, h, 14, 0)?; h = g.sigmoid(h); }
                if stage >= 6 { let t = g.leaf(t2.clone()); return g.bce_loss(h, t); }
                Ok(g.sum(h))
            }).unwrap();
            let worst = checks.iter().enumerate().map(|(i,c)| (c.rel_err, i)).fold((0.0f64,0), |a,b| if b.0>a.0 {b} else {a});
            println!("stage {stage}: worst rel {:.3e} at input {}", worst.0, worst.1);
        }
    }

    #[test]
    fn probe_multi_consumer() {
        let mut rng = derive_rng(900, 0);
        let x0 = random_tensor(&mut rng, &[1, 2, 4, 4], 0.2, 1.0);
        let checks = check_gradients(&[x0], 1e-5, |g, ids| {
            let y = g.relu(ids[0]);
            let z = g.maxpool2d(y)?;
            let w = g.upsample_nearest2x(z)?;
            let v = g.concat_channels(w, y)?;
            let s = g.sigmoid(v);
            Ok(g.sum(s))
        }).unwrap();
        println!("multi-consumer rel err {:.3e}", checks[0].rel_err);
    }

    #[test]
    fn probe_step_sensitivity() {
        let config = UNetConfig { n: 16, depth: 2, base_filters: 1 };
        let model = UNetModel::<f64>::build(config, 21).unwrap();
        let mut rng = derive_rng(500, 0);
        let mut inputs: Vec<Tensor<f64>> = model.params.iter().map(|p| p.value.clone()).collect();
        inputs.push(random_tensor(&mut rng, &[1, 1, 16, 16], 0.0, 1.0));
        let target = random_tensor(&mut rng, &[1, 1, 16, 16], 0.0, 1.0);
        for h in [1e-3, 1e-4, 1e-5] {
            let checks = check_gradients(&inputs, h, |g, ids| {
                let (params, rest) = ids.split_at(ids.len() - 1);
                let out = wire_forward(g, &config, params, rest[0])?;
                let t = g.leaf(target.clone());
                g.bce_loss(out, t)
            })
            .unwrap();
            let worst = checks.iter().enumerate().map(|(i, c)| (c.rel_err, i)).fold((0.0f64, 0), |a, b| if b.0 > a.0 { b } else { a });
            println!("h={h:e}: worst rel {:.3e} at input {}", worst.0, worst.1);
        }
    }
}
