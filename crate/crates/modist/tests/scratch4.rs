//! Temporary diagnostics; removed before release.

use modist::motion::MotionKind;
use modist::trainer::*;
use std::path::PathBuf;

#[test]
#[ignore]
fn eyeball_motion_clips() {
    let data = PathBuf::from("/tmp/modist-timing/runs/data3");
    let motion_dir = PathBuf::from("/tmp/modist-timing/runs/motion3/flow_edges");
    let corpus = load_corpus(
        &data.join("pretrain"),
        Some((motion_dir.as_path(), MotionKind::FlowEdges, 5)),
    )
    .unwrap();
    // one lin_e (label 0) and one lin_w (label 1)
    for want in [0usize, 1, 4, 6] {
        let item = corpus.items.iter().find(|i| i.video.label == want).unwrap();
        let mv = item.motion.as_ref().unwrap();
        println!("=== video {} label {want} ===", item.video.video_index);
        for t in [8usize, 10, 12] {
            println!("-- frame {t} (energy {:.3})", mv.energies[t]);
            let base = t * 32 * 32;
            for y in (0..32).step_by(2) {
                let mut row = String::new();
                for x in (0..32).step_by(1) {
                    let v = mv.maps[base + y * 32 + x];
                    row.push(if v > 7.0 {
                        '#'
                    } else if v > 2.0 {
                        '+'
                    } else if v > 0.2 {
                        '.'
                    } else {
                        ' '
                    });
                }
                println!("|{row}|");
            }
        }
    }
}
