use hallab::kg::{synthesize, DistSpec, NameLength, SynthConfig};
use hallab::model::ModelConfig;
use hallab::oracle::hallucination_rate;
use hallab::packing::format_and_pack;
use hallab::sampler::{generate_batch, Prompt};
use hallab::tokenizer::TokenizerVocab;
use hallab::train::{train, TrainConfig, TrainOptions};

fn main() {
    let kg = synthesize(&SynthConfig {
        n_subjects: 30,
        predicates_per_subject: DistSpec::uniform(1, 2),
        objects_per_pair: DistSpec::uniform(1, 2),
        entity_name_length: NameLength { min: 1, max: 2 },
        vocab_pool_size: 40,
        seed: 19,
    })
    .unwrap();
    let vocab = TokenizerVocab::build(&kg).unwrap();
    let trie = hallab::trie::ObjectTrie::build(&kg, &vocab).unwrap();
    let triplets: Vec<_> = kg.iter().cloned().collect();
    let stream = format_and_pack(&triplets, &vocab, 32).unwrap();
    eprintln!("triplets={} windows={} pairs={}", kg.len(), stream.num_windows(), kg.num_pairs());
    let prompts: Vec<Prompt> = kg.pairs().map(|(s, p, _)| Prompt::new(s, p, &vocab).unwrap()).collect();
    let max_len = trie.max_object_tokens() + 2;
    for epochs in [5u32, 10, 20, 40] {
        let mcfg = ModelConfig {
            n_layers: 2, n_heads: 2, d_model: 16, d_ff: 32,
            context_len: 32, vocab_size: vocab.vocab_size(), seed: 6,
        };
        let tcfg = TrainConfig::for_stream(
            5.0, mcfg.nonembedding_params(), epochs, stream.num_windows(), 4, 100, 7,
        ).unwrap();
        let out = train(&stream, &mcfg, &tcfg, &TrainOptions::default()).unwrap();
        let recs = generate_batch(&out.checkpoint.params, &vocab, &prompts, 1.0, 5, max_len, 3, "m", epochs, 128).unwrap();
        let stats = hallucination_rate(&recs, &kg);
        eprintln!("epochs={epochs} steps={} rate={:.3}", tcfg.total_steps, stats.rate());
    }
}
