// Temporary inspection; removed before release.
use scoresync::neural::datagen;

#[test]
#[ignore]
fn peek_inflection() {
    for seed in [3u64, 4] {
        let (sim, infl) = datagen::inflection_instance(seed).unwrap();
        println!("== seed {seed}: inflections {:?}", infl.points);
        for i in (0..64).step_by(2) {
            let mut line = String::new();
            for j in (0..64).step_by(1) {
                let v = sim.at(i, j);
                let ch = if v < 0.2 { '#' } else if v < 0.5 { '+' } else if v < 0.9 { '.' } else { ' ' };
                line.push(ch);
            }
            println!("{line}");
        }
    }
}
