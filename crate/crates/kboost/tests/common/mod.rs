#![allow(dead_code)]

use std::path::Path;

/// A configuration small enough to train and stream in seconds.
pub fn tiny_toml(task: &str, corpus: &Path) -> String {
    let k = if task == "ss" { 4 } else { 2 };
    let speaker = if task == "tse" { "speaker_dim = 4\n" } else { "" };
    let grid = |d: usize, attention: bool| {
        format!("d = {d}\nb = 2\nh = 4\nl = 2\nk = {k}\nattention = {attention}\nattention_window = 4\nqk_dim = 97\n{speaker}")
    };
    format!(
        r#"name = "tiny-{task}"
task = "{task}"
seed = 5

[delay]
c_out_ms = 8
c_in_ms = 8

[boost]
v = 3

[models.small]
{small}
[models.medium]
{medium}
[models.large]
{large}
[corpus]
dir = "{corpus}"
seconds = 0.4

[corpus.sizes]
train = 3
val = 2
test = 2

[pretrain]
epochs = 1
batch_size = 2

[train]
epochs = 1
batch_size = 2

[sweep]
c = [0, 2]
"#,
        small = grid(4, false),
        medium = grid(6, false),
        large = grid(8, true),
        corpus = corpus.display()
    )
}
