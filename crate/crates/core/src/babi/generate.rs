//! Seeded generator for task files in the bAbI v1.2 line format.
//!
//! Covers the single-supporting-fact (1), yes/no (6) and agent-motivation
//! (20) tasks with the same actors, locations, objects and sentence
//! templates as the public dataset, 1000 questions per file by default.
//! Used when no copy of the public corpus is available on disk.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const GENERATED_TASKS: [u32; 3] = [1, 6, 20];

const ACTORS: [&str; 4] = ["Mary", "John", "Daniel", "Sandra"];
const LOCATIONS: [&str; 6] = ["bathroom", "bedroom", "garden", "hallway", "kitchen", "office"];
const MOVES: [&str; 5] = ["moved to", "went to", "journeyed to", "travelled to", "went back to"];
const OBJECTS: [&str; 3] = ["apple", "football", "milk"];
const TAKES: [&str; 4] = ["got", "grabbed", "picked up", "took"];
const DROPS: [&str; 4] = ["dropped", "discarded", "put down", "left"];

const AGENTS: [&str; 4] = ["Yann", "Jason", "Antoine", "Sumit"];
// state, destination, object
const MOTIVES: [(&str, &str, &str); 4] = [
    ("hungry", "kitchen", "apple"),
    ("thirsty", "kitchen", "milk"),
    ("tired", "bedroom", "pajamas"),
    ("bored", "garden", "football"),
];

pub fn task_file_stem(task: u32) -> Option<&'static str> {
    match task {
        1 => Some("qa1_single-supporting-fact"),
        6 => Some("qa6_yes-no-questions"),
        20 => Some("qa20_agents-motivations"),
        _ => None,
    }
}

struct Story {
    text: String,
    line: u32,
}

impl Story {
    fn new() -> Self {
        Story {
            text: String::new(),
            line: 0,
        }
    }

    fn say(&mut self, sentence: &str) -> u32 {
        self.line += 1;
        let _ = writeln!(self.text, "{} {}", self.line, sentence);
        self.line
    }

    fn ask(&mut self, question: &str, answer: &str, support: &[u32]) {
        self.line += 1;
        let ids: Vec<String> = support.iter().map(u32::to_string).collect();
        let _ = writeln!(self.text, "{} {} \t{}\t{}", self.line, question, answer, ids.join(" "));
    }
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, xs: &'a [T]) -> &'a T {
    xs.choose(rng).expect("non-empty choice")
}

fn single_supporting_fact(rng: &mut ChaCha8Rng, out: &mut String, n_questions: usize) {
    let mut asked = 0;
    while asked < n_questions {
        let mut story = Story::new();
        let mut whereabouts: Vec<Option<(&str, u32)>> = vec![None; ACTORS.len()];
        for _ in 0..5.min(n_questions - asked) {
            for _ in 0..2 {
                let a = rng.gen_range(0..ACTORS.len());
                let loc = *pick(rng, &LOCATIONS);
                let id = story.say(&format!("{} {} the {}.", ACTORS[a], pick(rng, &MOVES), loc));
                whereabouts[a] = Some((loc, id));
            }
            let known: Vec<usize> = (0..ACTORS.len()).filter(|&a| whereabouts[a].is_some()).collect();
            let a = *pick(rng, &known);
            let (loc, id) = whereabouts[a].expect("known actor");
            story.ask(&format!("Where is {}?", ACTORS[a]), loc, &[id]);
            asked += 1;
        }
        out.push_str(&story.text);
    }
}

fn yes_no_questions(rng: &mut ChaCha8Rng, out: &mut String, n_questions: usize) {
    let mut asked = 0;
    while asked < n_questions {
        let mut story = Story::new();
        let mut whereabouts: Vec<Option<(&str, u32)>> = vec![None; ACTORS.len()];
        let mut holder: Vec<Option<usize>> = vec![None; OBJECTS.len()];
        for _ in 0..5.min(n_questions - asked) {
            let mut statements = 0;
            while statements < 2 {
                let a = rng.gen_range(0..ACTORS.len());
                if rng.gen_bool(0.7) || whereabouts[a].is_none() {
                    let loc = *pick(rng, &LOCATIONS);
                    let id = story.say(&format!("{} {} the {}.", ACTORS[a], pick(rng, &MOVES), loc));
                    whereabouts[a] = Some((loc, id));
                } else {
                    let o = rng.gen_range(0..OBJECTS.len());
                    match holder[o] {
                        Some(h) if h == a => {
                            story.say(&format!("{} {} the {}.", ACTORS[a], pick(rng, &DROPS), OBJECTS[o]));
                            holder[o] = None;
                        }
                        Some(_) => continue,
                        None => {
                            story.say(&format!("{} {} the {} there.", ACTORS[a], pick(rng, &TAKES), OBJECTS[o]));
                            holder[o] = Some(a);
                        }
                    }
                }
                statements += 1;
            }
            let known: Vec<usize> = (0..ACTORS.len()).filter(|&a| whereabouts[a].is_some()).collect();
            let a = *pick(rng, &known);
            let (loc, id) = whereabouts[a].expect("known actor");
            let (asked_loc, answer) = if rng.gen_bool(0.5) {
                (loc, "yes")
            } else {
                let others: Vec<&str> = LOCATIONS.iter().copied().filter(|l| *l != loc).collect();
                (*pick(rng, &others), "no")
            };
            story.ask(&format!("Is {} in the {}?", ACTORS[a], asked_loc), answer, &[id]);
            asked += 1;
        }
        out.push_str(&story.text);
    }
}

fn agents_motivations(rng: &mut ChaCha8Rng, out: &mut String, n_questions: usize) {
    let mut asked = 0;
    while asked < n_questions {
        let mut story = Story::new();
        let mut agents: Vec<usize> = (0..AGENTS.len()).collect();
        agents.shuffle(rng);
        agents.truncate(rng.gen_range(2..=AGENTS.len()));
        // (agent, motive, next step, line of the state sentence)
        let mut progress: Vec<(usize, usize, u8, u32)> =
            agents.iter().map(|&a| (a, rng.gen_range(0..MOTIVES.len()), 0, 0)).collect();

        while asked < n_questions {
            let live: Vec<usize> = (0..progress.len()).filter(|&i| progress[i].2 < 3).collect();
            if live.is_empty() {
                break;
            }
            let slot = *pick(rng, &live);
            let (a, m, step, state_line) = progress[slot];
            let (state, dest, object) = MOTIVES[m];
            let name = AGENTS[a];
            let lower = name.to_lowercase();
            let ask = rng.gen_bool(0.85);
            match step {
                0 => {
                    let id = story.say(&format!("{name} is {state}."));
                    progress[slot].3 = id;
                    if ask {
                        story.ask(&format!("Where will {lower} go?"), dest, &[id]);
                        asked += 1;
                    }
                }
                1 => {
                    story.say(&format!("{name} {} the {dest}.", pick(rng, &MOVES)));
                    if ask {
                        story.ask(&format!("Why did {lower} go to the {dest}?"), state, &[state_line]);
                        asked += 1;
                    }
                }
                _ => {
                    story.say(&format!("{name} {} the {object} there.", pick(rng, &TAKES)));
                    if ask {
                        story.ask(&format!("Why did {lower} get the {object}?"), state, &[state_line]);
                        asked += 1;
                    }
                }
            }
            progress[slot].2 += 1;
        }
        out.push_str(&story.text);
    }
}

/// Text of one task file with exactly `n_questions` questions.
pub fn generate_task(task: u32, seed: u64, n_questions: usize) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(task) << 32));
    let mut out = String::new();
    match task {
        1 => single_supporting_fact(&mut rng, &mut out, n_questions),
        6 => yes_no_questions(&mut rng, &mut out, n_questions),
        20 => agents_motivations(&mut rng, &mut out, n_questions),
        other => {
            return Err(Error::Unsupported(format!(
                "no generator for task {other}; available: {GENERATED_TASKS:?}"
            )))
        }
    }
    Ok(out)
}

/// Writes `qa{K}_<name>_{train,test}.txt` for each task into `dir`.
pub fn write_corpus(dir: &Path, tasks: &[u32], seed: u64, n_questions: usize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for &task in tasks {
        let stem = task_file_stem(task)
            .ok_or_else(|| Error::Unsupported(format!("no generator for task {task}")))?;
        for (split, split_seed) in [("train", seed), ("test", seed.wrapping_add(0x9e37_79b9))] {
            let path = dir.join(format!("{stem}_{split}.txt"));
            let text = generate_task(task, split_seed, n_questions)?;
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::babi::parse_babi;

    #[test]
    fn each_task_parses_to_requested_count() {
        for task in GENERATED_TASKS {
            let text = generate_task(task, 5, 1000).unwrap();
            let samples = parse_babi(&text, task).unwrap();
            assert_eq!(samples.len(), 1000, "task {task}");
            assert!(samples.iter().all(|s| s.story.len() <= 50));
        }
    }

    #[test]
    fn answers_are_supported_by_story() {
        let text = generate_task(1, 9, 200).unwrap();
        for s in parse_babi(&text, 1).unwrap() {
            let actor = s.query.last().unwrap();
            let last = s.story.iter().rev().find(|sent| sent[0] == *actor).unwrap();
            assert_eq!(last.last().unwrap(), &s.answer);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate_task(20, 3, 100).unwrap(), generate_task(20, 3, 100).unwrap());
        assert_ne!(generate_task(20, 3, 100).unwrap(), generate_task(20, 4, 100).unwrap());
    }

    #[test]
    fn unknown_task_is_rejected() {
        assert!(matches!(generate_task(2, 0, 10), Err(Error::Unsupported(_))));
    }
}
