// Regenerates data/synthetic/: a few addition questions, their prompt pack,
// a config, and a script recorded from the rule-based responder so that
// `cpo search --backend scripted` can replay the run offline.
//
//   cpo_make_synthetic [out_dir] [question_count] [seed]

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "cpo/backend.hpp"
#include "cpo/json_io.hpp"
#include "cpo/search.hpp"
#include "cpo/synthetic.hpp"

int main(int argc, char** argv) {
    namespace fs = std::filesystem;
    const fs::path out = argc > 1 ? argv[1] : "data/synthetic";
    const std::size_t count = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 6;
    const std::uint64_t seed = argc > 3 ? std::strtoull(argv[3], nullptr, 10) : 7;

    cpo::SearchConfig config = cpo::default_config(cpo::TaskClass::Arithmetic);
    config.k = 4;
    config.n = 2;
    config.eval_samples = 3;
    config.max_depth = 6;
    config.seed = seed;

    const auto questions = cpo::synthetic::make_questions(count, seed);
    const auto pack = cpo::synthetic::make_pack();
    cpo::RecordingBackend backend(
        [](std::string_view p, std::uint64_t s) { return cpo::synthetic::respond(p, s); }, "synthetic-addition");

    try {
        for (const auto& q : questions) {
            const auto tree = cpo::run_search(q.text, pack, config, backend, cpo::SearchOptions{q.instance_id, 4});
            std::cerr << q.instance_id << ": " << tree.nodes.size() << " nodes, " << tree.selected_leaves.size()
                      << " selected leaves, " << cpo::to_string(tree.status) << "\n";
        }
        fs::create_directories(out);
        cpo::write_file(out / "questions.jsonl", cpo::encode_questions(questions));
        cpo::write_file(out / "pack.json", cpo::to_json(pack).dump(2) + "\n");
        cpo::write_file(out / "config.json", cpo::to_json(config).dump(2) + "\n");
        cpo::write_file(out / "script.jsonl", cpo::encode_script(backend.recorded().entries()));
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
