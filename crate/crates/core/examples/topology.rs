//! Builds the supported graphs and prints their Metropolis mixing rates.

use featnet::topology::{build_random_geometric_graph, CombinationMatrix, Graph};

fn main() -> featnet::Result<()> {
    let graphs = [
        ("ring(8)", Graph::ring(8)?),
        ("path(8)", Graph::path(8)?),
        ("complete(8)", Graph::complete(8)?),
        ("rgg(28, r=0.3)", build_random_geometric_graph(28, 0.3, 0)?),
        ("rgg(28, r=0.6)", build_random_geometric_graph(28, 0.6, 0)?),
    ];
    for (name, g) in graphs {
        let a = CombinationMatrix::metropolis(&g)?;
        println!("{name:<16} edges {:>3}  lambda {:.4}", g.edge_count(), a.lambda());
    }
    Ok(())
}
