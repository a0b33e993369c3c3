mod common;

use common::{corpus, first_batches, tiny_config};
use dapnet_core::data::Domain;
use dapnet_core::evaluation::sliding_window_infer;
use dapnet_core::exec::set_parallel;
use dapnet_core::training::{train_step, TrainState};
use dapnet_core::Variant;

// Single test: the execution mode is process-global.
#[test]
fn parallel_and_sequential_modes_agree_bitwise() {
    let cfg = tiny_config(Variant::Full);
    let (source, target) = (corpus(4, 64, Domain::Source, 1), corpus(3, 64, Domain::Target, 2));
    let (src, tgt) = first_batches(&cfg, &source, &target);

    let run = |parallel: bool| {
        set_parallel(parallel);
        let mut state = TrainState::new(&cfg);
        let losses = train_step(&mut state, &src, &tgt, &cfg).unwrap();
        let image = &target.samples()[0].image;
        let probs = sliding_window_infer(&state.nets.generator, image, Domain::Target, 48, 16).unwrap();
        (losses, state.params_checksum(), probs)
    };
    let par = run(true);
    let seq = run(false);
    set_parallel(true);
    assert_eq!(par.0, seq.0);
    assert_eq!(par.1, seq.1);
    assert_eq!(par.2, seq.2);
}
