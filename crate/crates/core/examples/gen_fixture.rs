fn main() {
    let config = risfair_core::experiment::toy_config();
    let topo = risfair_core::channel::sample_topology(&config, 7);
    let channels = risfair_core::channel::sample_channels(&topo, &config, 7);
    println!("{}", serde_json::to_string(&channels).unwrap());
}
