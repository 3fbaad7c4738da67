//! One day of a staffed queue: arrivals by thinning, FIFO service, a server
//! schedule that changes at 10:00 and 20:00.

use cpcal::simkit::{sample_arrivals, simulate, EventKind, RateProfile, ResourceSchedule, ServiceModel};

fn main() -> cpcal::Result<()> {
    let horizon = 1440.0;
    let profile = RateProfile::new(vec![630.0, 1140.0], vec![0.84, 1.8, 0.9])?;
    let schedule = ResourceSchedule::new(vec![600.0, 1200.0], vec![1, 3, 2], horizon)?;
    let service = ServiceModel::Exponential { mean: 1.0 };

    let trace = sample_arrivals(&profile, horizon, 7)?;
    let log = simulate(&trace, &schedule, &service, 8)?;

    println!("arrivals   {}", log.count(EventKind::Arrival));
    println!("started    {}", log.count(EventKind::ServiceStart));
    println!("completed  {}", log.count(EventKind::ServiceEnd));

    let entities = log.entities()?;
    for (from, to) in [(0.0, 600.0), (600.0, 1200.0), (1200.0, horizon)] {
        let waits: Vec<f64> = entities
            .iter()
            .filter(|e| e.arrival >= from && e.arrival < to)
            .filter_map(|e| e.service_start.map(|s| s - e.arrival))
            .collect();
        let mean = waits.iter().sum::<f64>() / waits.len().max(1) as f64;
        println!(
            "[{from:>6}, {to:>6})  servers {}  served {:>4}  mean wait {mean:.2} min",
            schedule.level_at(from),
            waits.len()
        );
    }
    Ok(())
}
