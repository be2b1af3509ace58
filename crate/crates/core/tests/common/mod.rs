#![allow(dead_code)]

pub mod oracles;

pub type Sentence = Vec<String>;

pub fn s(text: &str) -> Sentence {
    text.split_whitespace().map(str::to_string).collect()
}

/// Candidates with one reference set each.
pub struct Corpus {
    pub name: &'static str,
    pub candidates: Vec<Sentence>,
    pub references: Vec<Vec<Sentence>>,
}

fn corpus(name: &'static str, items: &[(&str, &[&str])]) -> Corpus {
    Corpus {
        name,
        candidates: items.iter().map(|(c, _)| s(c)).collect(),
        references: items.iter().map(|(_, rs)| rs.iter().map(|r| s(r)).collect()).collect(),
    }
}

/// Small corpora covering exact matches, repeats, brevity, disjoint text and long references.
pub fn hand_corpora() -> Vec<Corpus> {
    vec![
        corpus("two sentences", &[
            ("a man rides a horse", &["a man is riding a horse", "a person on a horse"]),
            ("a cat on a mat", &["the cat sits on the mat"]),
        ]),
        corpus("exact match among three", &[
            ("a dog runs in the park", &["a dog runs in the park", "a dog is running"]),
            ("two birds on a wire", &["birds sitting on a power line"]),
            ("a red bus on the road", &["a bus drives down the road", "a red bus"]),
        ]),
        corpus("repeated words", &[
            ("the the the the the the", &["the cat is on the mat", "there is a cat on the mat"]),
            ("a a a cake cake", &["a cake with a candle"]),
        ]),
        corpus("short candidates", &[
            ("a man", &["a man wears a hat at the party"]),
            ("cake", &["a cake on a table", "candles on a cake"]),
            ("a red car", &["a red car on a busy road"]),
        ]),
        corpus("long candidates", &[
            ("a man and a woman eat pizza on a plate at a table with a cup", &["a man eats pizza"]),
            ("a bus and a car drive near a light on a road beside a sign", &["traffic on a road"]),
        ]),
        corpus("single image", &[("a balloon above a table", &["a balloon above a table", "balloons over the table"])]),
        corpus("partial overlap", &[
            ("a woman holds a fork near bread", &["a woman holds a fork", "someone eats bread with a fork"]),
            ("a cup beside bread on a plate", &["a cup of coffee beside some bread"]),
            ("a dog under a tree", &["a dog sleeps under a big tree", "a tree shades a dog"]),
            ("a chair behind a table", &["a table and chairs"]),
        ]),
        corpus("one disjoint candidate", &[
            ("zebra giraffe elephant", &["a man on a bike"]),
            ("a man on a bike", &["a man riding a bike", "a cyclist on the street"]),
        ]),
        corpus("varied reference counts", &[
            ("a party with cake and balloons", &["a party with a cake", "balloons at a party", "a birthday cake", "people at a party", "a cake and balloons"]),
            ("a meal of pizza", &["pizza for dinner"]),
            ("traffic on the road", &["cars on a road", "a busy road with traffic"]),
        ]),
        corpus("identical captions everywhere", &[
            ("a man wears a hat", &["a man wears a hat", "a man wears a hat"]),
            ("a man wears a hat", &["a man wears a hat"]),
            ("a woman holds a cup", &["a woman holds a cup"]),
        ]),
        corpus("bigram order swaps", &[
            ("on the table a cake", &["a cake on the table"]),
            ("road the on car a", &["a car on the road", "the road has a car"]),
        ]),
        corpus("five images", &[
            ("a cat", &["a cat on a sofa"]),
            ("a dog on a sofa", &["a dog sleeping on a sofa", "a sofa with a dog"]),
            ("a bird in a tree", &["a small bird in a tree"]),
            ("a tree", &["a tall tree in a field", "a field with a tree"]),
            ("a field of grass", &["green grass in a field"]),
        ]),
    ]
}
