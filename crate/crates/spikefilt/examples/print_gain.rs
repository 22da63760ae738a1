fn main() {
    let k = spikefilt::systems::default_k_ctrl();
    for i in 0..3 {
        let row: Vec<String> = (0..6).map(|j| format!("{:.17e}", k[(i, j)])).collect();
        println!("[{}],", row.join(", "));
    }
}
