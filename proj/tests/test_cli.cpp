// Run configuration, config files, and the four batch commands.

#include "doctest.h"

#include "nmt/commands.hpp"
#include "nmt/error.hpp"
#include "nmt/runconfig.hpp"
#include "nmt/textfmt.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace nmt;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const char* name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    REQUIRE(out.good());
    out << text;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// A copy-task configuration small enough to train in well under a second.
RunConfig tiny_run(const std::string& out_dir) {
    RunConfig cfg;
    cfg.variant = "model1";
    cfg.task = "copy";
    cfg.train_pairs = 200;
    cfg.dev_pairs = 30;
    cfg.len_lo = 2;
    cfg.len_hi = 5;
    cfg.symbols = 6;
    cfg.model.d_model = 16;
    cfg.model.d_ffn = 32;
    cfg.model.n_heads = 2;
    cfg.model.n_layers = 1;
    cfg.model.dropout = 0.0;
    cfg.train.max_steps = 60;
    cfg.train.batch_size = 32;
    cfg.train.validate_every = 30;
    cfg.train.warmup_steps = 20;
    cfg.train.seed = 11;
    cfg.out_dir = out_dir;
    return cfg;
}

}  // namespace

TEST_CASE("config files parse key = value lines with comments") {
    const auto dir = fresh_dir("nmt_cli_cfg");
    write_file(dir / "run.cfg",
               "# training setup\n"
               "variant = model2\n"
               "d_model=48   # inline comment\n"
               "  lambda =  0.3\n"
               "\n"
               "task = map\n"
               "smooth_future = false\n");
    RunConfig cfg;
    load_run_config_file(cfg, (dir / "run.cfg").string());
    CHECK(cfg.variant == "model2");
    CHECK(cfg.model.d_model == 48);
    CHECK(cfg.train.lambda == 0.3);
    CHECK(cfg.lambda_set);
    CHECK(cfg.task == "map");
    CHECK_FALSE(cfg.train.smooth_future);

    write_file(dir / "bad_key.cfg", "d_model = 32\nno_such_key = 1\n");
    CHECK_THROWS_WITH_AS(load_run_config_file(cfg, (dir / "bad_key.cfg").string()),
                         "unknown config key 'no_such_key' (line 2)", ConfigError);

    write_file(dir / "bad_line.cfg", "d_model 32\n");
    CHECK_THROWS_AS(load_run_config_file(cfg, (dir / "bad_line.cfg").string()), ConfigError);

    write_file(dir / "bad_value.cfg", "d_model = wide\n");
    CHECK_THROWS_WITH_AS(load_run_config_file(cfg, (dir / "bad_value.cfg").string()),
                         "config key 'd_model' expects an integer, got 'wide' (line 1)",
                         ConfigError);

    CHECK_THROWS_AS(load_run_config_file(cfg, (dir / "absent.cfg").string()), IoError);
}

TEST_CASE("presets set the documented scales") {
    RunConfig desk;
    apply_preset(desk, "desk");
    CHECK(desk.model.d_model == 64);

    RunConfig paper;
    apply_preset(paper, "paper");
    CHECK(paper.model.d_model == 512);
    CHECK(paper.model.d_ffn == 2048);
    CHECK(paper.model.n_heads == 8);
    CHECK(paper.model.n_layers == 6);
    CHECK(paper.train.warmup_steps == 8000);
    CHECK(paper.train.label_smoothing == 0.1);

    RunConfig other;
    CHECK_THROWS_AS(apply_preset(other, "galactic"), ConfigError);
}

TEST_CASE("run config validation rejects contradictions") {
    RunConfig cfg = tiny_run("unused");

    SUBCASE("explicit lambda with the baseline variant") {
        cfg.variant = "baseline";
        apply_run_key(cfg, "lambda", "0.5");
        CHECK_THROWS_WITH_AS(cfg.validate(),
                             "variant 'baseline' has no future-cost loss; lambda cannot be set",
                             ConfigError);
    }
    SUBCASE("baseline without lambda is fine") {
        cfg.variant = "baseline";
        CHECK_NOTHROW(cfg.validate());
    }
    SUBCASE("unknown variant and task") {
        cfg.variant = "model3";
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
        cfg.variant = "model1";
        cfg.task = "sort";
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
    SUBCASE("sentence lengths must fit the model cap") {
        cfg.len_hi = cfg.model.max_len;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
        cfg.len_hi = 0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
    SUBCASE("file corpora need both sides") {
        cfg.train_tsv = "train.tsv";
        CHECK_THROWS_WITH_AS(cfg.validate(), "dev_tsv is required when train_tsv is given",
                             ConfigError);
    }
}

TEST_CASE("synthetic run data shares the map bijection across the split") {
    RunConfig cfg = tiny_run("unused");
    cfg.task = "map";
    cfg.train_pairs = 120;
    cfg.dev_pairs = 40;
    const RunData data = build_run_data(cfg);
    REQUIRE(data.train.size() == 120);
    REQUIRE(data.dev.size() == 40);

    // Recover the symbol mapping from the training pairs, then require every
    // dev pair to follow the same mapping.
    std::map<std::string, std::string> mapping;
    for (const auto& pair : data.train) {
        REQUIRE(pair.src.size() == pair.tgt.size());
        for (std::size_t i = 0; i < pair.src.size(); ++i) {
            auto [it, inserted] = mapping.emplace(pair.src[i], pair.tgt[i]);
            REQUIRE(it->second == pair.tgt[i]);
        }
    }
    for (const auto& pair : data.dev) {
        REQUIRE(pair.src.size() == pair.tgt.size());
        for (std::size_t i = 0; i < pair.src.size(); ++i) {
            auto it = mapping.find(pair.src[i]);
            if (it != mapping.end()) CHECK(it->second == pair.tgt[i]);
        }
    }

    // The same seed draws the same corpus again.
    const RunData again = build_run_data(cfg);
    REQUIRE(again.dev.size() == data.dev.size());
    for (std::size_t i = 0; i < data.dev.size(); ++i) {
        CHECK(again.dev[i].src == data.dev[i].src);
        CHECK(again.dev[i].tgt == data.dev[i].tgt);
    }
}

TEST_CASE("run data can come from corpus files") {
    const auto dir = fresh_dir("nmt_cli_tsv");
    const std::vector<SentencePair> train = {{{"a", "b"}, {"b", "a"}},
                                             {{"c", "d", "e"}, {"e", "d", "c"}}};
    const std::vector<SentencePair> dev = {{{"a", "c"}, {"c", "a"}}};
    write_corpus_tsv((dir / "train.tsv").string(), train);
    write_corpus_tsv((dir / "dev.tsv").string(), dev);

    RunConfig cfg = tiny_run("unused");
    cfg.train_tsv = (dir / "train.tsv").string();
    cfg.dev_tsv = (dir / "dev.tsv").string();
    const RunData data = build_run_data(cfg);
    REQUIRE(data.train.size() == 2);
    REQUIRE(data.dev.size() == 1);
    CHECK(data.train[1].tgt == std::vector<std::string>{"e", "d", "c"});
    CHECK(data.vocab.contains("a"));
}

TEST_CASE("cmd_train writes artifacts and a key-value summary") {
    const auto dir = fresh_dir("nmt_cli_train");
    const RunConfig cfg = tiny_run((dir / "run").string());

    std::ostringstream summary;
    const TrainOutcome outcome = cmd_train(cfg, summary);
    CHECK(outcome.result.steps_run == 60);
    CHECK(fs::exists(outcome.metrics_path));
    CHECK(fs::exists(outcome.best_checkpoint));
    CHECK(fs::exists(outcome.last_checkpoint));

    const std::string text = summary.str();
    CHECK(text.find("variant\tmodel1\n") != std::string::npos);
    CHECK(text.find("steps\t60\n") != std::string::npos);
    CHECK(text.find("vocab_size\t10\n") != std::string::npos);  // 6 symbols + 4 reserved
    CHECK(text.find("best_dev_joint\t") != std::string::npos);

    // Same config and seed into a second directory: byte-identical metrics.
    RunConfig rerun = cfg;
    rerun.out_dir = (dir / "run2").string();
    std::ostringstream summary2;
    const TrainOutcome outcome2 = cmd_train(rerun, summary2);
    CHECK(slurp(outcome.metrics_path) == slurp(outcome2.metrics_path));
}

TEST_CASE("cmd_translate decodes files line by line") {
    const auto dir = fresh_dir("nmt_cli_translate");
    RunConfig cfg = tiny_run((dir / "run").string());
    cfg.train.max_steps = 200;  // enough for the copy task to become exact
    cfg.train.validate_every = 100;
    std::ostringstream sink;
    const TrainOutcome trained = cmd_train(cfg, sink);

    write_file(dir / "in.txt", "a b c\n\nb a\n");

    TranslateArgs greedy;
    greedy.checkpoint = trained.best_checkpoint;
    greedy.input = (dir / "in.txt").string();
    greedy.output = (dir / "greedy.txt").string();
    greedy.greedy = true;
    std::ostringstream out, warn;
    cmd_translate(greedy, out, warn);
    CHECK(out.str().empty());
    CHECK(warn.str().empty());
    CHECK(slurp(dir / "greedy.txt") == "a b c\n\nb a\n");

    SUBCASE("beam of one matches greedy output bytes") {
        TranslateArgs beam1 = greedy;
        beam1.greedy = false;
        beam1.decode.beam_size = 1;
        beam1.output = (dir / "beam1.txt").string();
        cmd_translate(beam1, out, warn);
        CHECK(slurp(dir / "beam1.txt") == slurp(dir / "greedy.txt"));
    }

    SUBCASE("beam search with a trace file") {
        TranslateArgs beam = greedy;
        beam.greedy = false;
        beam.decode.beam_size = 3;
        beam.output = (dir / "beam.txt").string();
        beam.trace_path = (dir / "trace.txt").string();
        cmd_translate(beam, out, warn);
        CHECK(slurp(dir / "beam.txt") == "a b c\n\nb a\n");

        const std::string trace = slurp(dir / "trace.txt");
        // Two non-empty sentences, each opening its own block.
        CHECK(trace.find("sentence 1\n") != std::string::npos);
        CHECK(trace.find("sentence 3\n") != std::string::npos);
        CHECK(trace.find("sentence 2\n") == std::string::npos);
        // Leaderboard rows are step TAB rank TAB score TAB penalized TAB
        // finished TAB tokens.
        std::istringstream lines(trace);
        std::string line;
        std::getline(lines, line);
        REQUIRE(std::getline(lines, line));
        CHECK(std::count(line.begin(), line.end(), '\t') == 5);
        CHECK(line.substr(0, 2) == "1\t");
    }

    SUBCASE("unknown tokens warn once and map to UNK") {
        write_file(dir / "unk.txt", "zz a zz\n");
        TranslateArgs args = greedy;
        args.input = (dir / "unk.txt").string();
        args.output = (dir / "unk_out.txt").string();
        std::ostringstream warn2;
        cmd_translate(args, out, warn2);
        const std::string w = warn2.str();
        CHECK(w.find("token 'zz' is not in the checkpoint vocabulary") != std::string::npos);
        CHECK(w.find("zz") == w.rfind("zz"));  // warned a single time
    }

    SUBCASE("empty input file produces an empty output file") {
        write_file(dir / "empty.txt", "");
        TranslateArgs args = greedy;
        args.input = (dir / "empty.txt").string();
        args.output = (dir / "empty_out.txt").string();
        cmd_translate(args, out, warn);
        CHECK(slurp(dir / "empty_out.txt").empty());
    }

    SUBCASE("an overlong input line is rejected with its line number") {
        std::string longline;
        for (int i = 0; i < 70; ++i) longline += "a ";
        write_file(dir / "long.txt", "a b\n" + longline + "\n");
        TranslateArgs args = greedy;
        args.input = (dir / "long.txt").string();
        args.output = (dir / "long_out.txt").string();
        CHECK_THROWS_WITH_AS(cmd_translate(args, out, warn),
                             "input line 2 has 70 tokens but the model caps sequences at 64",
                             InputError);
    }

    SUBCASE("a missing checkpoint is an io error") {
        TranslateArgs args = greedy;
        args.checkpoint = (dir / "absent.ckpt").string();
        CHECK_THROWS_AS(cmd_translate(args, out, warn), IoError);
    }
}

TEST_CASE("cmd_evaluate agrees with bleu4 and formats both reports") {
    const auto dir = fresh_dir("nmt_cli_eval");
    write_file(dir / "hyp.txt", "the cat sat on the mat\na b c d e\n");
    write_file(dir / "ref.txt", "the cat is on the mat\na b c d e\n");
    write_file(dir / "src.txt", "s1 s2 s3\nt1 t2 t3 t4 t5 t6 t7 t8 t9 t10 t11\n");

    EvaluateArgs args;
    args.hyp_path = (dir / "hyp.txt").string();
    args.ref_path = (dir / "ref.txt").string();
    args.src_path = (dir / "src.txt").string();
    args.report_path = (dir / "report.tsv").string();

    std::ostringstream out;
    const BleuReport rep = cmd_evaluate(args, out);

    const BleuReport direct = bleu4(
        {split_ws("the cat sat on the mat"), split_ws("a b c d e")},
        {split_ws("the cat is on the mat"), split_ws("a b c d e")});
    CHECK(rep.bleu == direct.bleu);
    CHECK(rep.brevity_penalty == direct.brevity_penalty);

    const std::string text = out.str();
    CHECK(text.find("BLEU = 63.40") != std::string::npos);
    CHECK(text.find("source_len\tsentences\tbleu\n") != std::string::npos);
    CHECK(text.find("(0,10]\t1\t") != std::string::npos);
    CHECK(text.find("(10,20]\t1\t100.00") != std::string::npos);
    CHECK(text.find("(50,inf)\t0\t-") != std::string::npos);

    const std::string report = slurp(dir / "report.tsv");
    CHECK(report.find("bleu\t" + fmt_double(direct.bleu) + "\n") != std::string::npos);
    CHECK(report.find("hyp_length\t11\n") != std::string::npos);
    CHECK(report.find("bucket3_bleu\tnull\n") != std::string::npos);

    SUBCASE("line-count mismatches name both counts") {
        write_file(dir / "short.txt", "one line\n");
        EvaluateArgs bad = args;
        bad.hyp_path = (dir / "short.txt").string();
        CHECK_THROWS_WITH_AS(cmd_evaluate(bad, out),
                             "hypothesis file has 1 lines but reference file has 2 lines",
                             InputError);
        bad = args;
        bad.src_path = (dir / "short.txt").string();
        CHECK_THROWS_WITH_AS(cmd_evaluate(bad, out),
                             "source file has 1 lines but reference file has 2 lines", InputError);
    }

    SUBCASE("identical files score one hundred") {
        EvaluateArgs same;
        same.hyp_path = args.ref_path;
        same.ref_path = args.ref_path;
        std::ostringstream out2;
        CHECK(cmd_evaluate(same, out2).bleu == 100.0);
    }
}

TEST_CASE("cmd_sweep tabulates one row per lambda, ascending") {
    const auto dir = fresh_dir("nmt_cli_sweep");
    RunConfig cfg = tiny_run((dir / "sweep").string());
    cfg.train.max_steps = 40;
    cfg.train.validate_every = 20;

    std::ostringstream table, progress;
    const auto rows = cmd_sweep(cfg, {0.5, 0.0}, table, progress);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].lambda == 0.0);
    CHECK(rows[1].lambda == 0.5);
    CHECK(rows[0].ok);
    CHECK(rows[1].ok);

    const std::string text = table.str();
    CHECK(text.find("lambda\tdev_bleu\tbest_dev_joint\tbest_step\tstatus\n") == 0);
    CHECK(text.find("\nlambda-") == std::string::npos);
    CHECK(slurp(dir / "sweep" / "sweep.tsv") == text);

    // With the shared seed, the model1 lambda = 0 cell reproduces the
    // baseline's dev loss exactly: the future term neither contributes to
    // the joint loss nor perturbs a single shared parameter.
    RunConfig base = cfg;
    base.variant = "baseline";
    base.out_dir = (dir / "baseline").string();
    std::ostringstream sink;
    const TrainOutcome baseline = cmd_train(base, sink);
    CHECK(rows[0].best_dev_joint == baseline.result.best_dev_joint);

    SUBCASE("rejections") {
        CHECK_THROWS_AS(cmd_sweep(cfg, {}, table, progress), ConfigError);
        CHECK_THROWS_AS(cmd_sweep(cfg, {0.1, -0.2}, table, progress), ConfigError);
        RunConfig b = cfg;
        b.variant = "baseline";
        CHECK_THROWS_AS(cmd_sweep(b, {0.1}, table, progress), ConfigError);
    }

    SUBCASE("a failing cell is recorded and the sweep continues") {
        RunConfig bad = cfg;
        bad.model.d_model = 18;  // not divisible by n_heads once validated
        bad.model.n_heads = 4;
        bad.out_dir = (dir / "bad").string();
        std::ostringstream table2, progress2;
        const auto rows2 = cmd_sweep(bad, {0.1, 0.7}, table2, progress2);
        REQUIRE(rows2.size() == 2);
        CHECK_FALSE(rows2[0].ok);
        CHECK_FALSE(rows2[1].ok);
        CHECK(!rows2[0].error.empty());
        CHECK(table2.str().find("failed: ") != std::string::npos);
    }
}
