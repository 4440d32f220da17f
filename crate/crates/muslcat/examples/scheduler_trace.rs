//! Walks the plateau scheduler through a permanent plateau and prints the
//! exact learning-rate staircase it produces: divide by 5 after three
//! epochs without improvement, stop once a reduction lands below 1.6e-5.
//!
//! Run with `cargo run --example scheduler_trace`.

use muslcat::optim::{PlateauScheduler, SchedulerDecision};

fn main() {
    let mut sched = PlateauScheduler::new(0.01, 3, 1.6e-5).unwrap();
    println!("{:>6} {:>10} {:>12}", "epoch", "val loss", "lr");
    let mut epoch = 0;
    loop {
        epoch += 1;
        let lr = sched.lr();
        // The validation loss never improves after epoch 1.
        let val = 1.0;
        println!("{epoch:>6} {val:>10.3} {lr:>12e}");
        match sched.observe(val) {
            SchedulerDecision::Continue => {}
            SchedulerDecision::Reduced(lr) => println!("{:>30} -> reduced to {lr:e}", ""),
            SchedulerDecision::Stop(lr) => {
                println!("{:>30} -> {lr:e} is below the floor, stop", "");
                break;
            }
        }
    }
}
