//! Prints the layer-by-layer shape trace and parameter count of the full
//! seven-layer classifier and of its desk-scale counterpart.

use pofsm::nn::NetworkSpec;

fn show(title: &str, spec: &NetworkSpec) -> pofsm::Result<()> {
    println!("{title}: input {:?}, {} parameters", spec.input_dims, spec.param_count()?);
    for (layer, shape) in spec.layers.iter().zip(spec.shape_trace()?) {
        println!("  {:<8} {:<40} -> {}x{}x{}", layer.name, layer.kind.to_string(), shape[0], shape[1], shape[2]);
    }
    println!();
    Ok(())
}

fn main() -> pofsm::Result<()> {
    show("full-size classifier", &NetworkSpec::full_classifier(101))?;
    show("desk classifier", &NetworkSpec::desk_classifier(3))?;
    show("desk flow network", &NetworkSpec::desk_flow(32, 32, 5, 12))
}
