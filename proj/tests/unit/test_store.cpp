#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "headlamp/ablation.hpp"
#include "headlamp/store.hpp"
#include "test_util.hpp"

using namespace headlamp;
using nlohmann::json;

namespace {

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::size_t count_char(const std::string& s, char c) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), c)); }

TraceFile toy_trace_file(std::size_t samples) {
    TraceFile f;
    f.provenance = {"0123456789abcdef", 42};
    f.shape = testutil::toy_model().shape();
    f.extra = {{"note", "toy"}};
    for (std::size_t i = 0; i < samples; ++i) {
        ToyNiahConfig c;
        c.haystack_len = 40;
        const auto s = make_toy_niah(testutil::toy_tokenizer(), c, 0.5, i);
        const TaskInstance task{s.prompt, s.needle_span, s.answer_text, s.max_new()};
        auto run = collect_frames(testutil::toy_model(), task, {}, "s" + std::to_string(i), i);
        f.samples.push_back({run.trace, task.needle, run.frames, run.spans});
    }
    return f;
}

float as_float(double v) { return static_cast<float>(v); }

}  // namespace

TEST(Store, SparseRowKeepsTrueArgmax) {
    Rng rng(17);
    for (int i = 0; i < 1000; ++i) {
        const auto row = testutil::random_row(rng, 5 + rng.below(60));
        const int m = 1 + static_cast<int>(rng.below(8));
        const auto sp = sparsify_row(row, m);
        // Reference argmax: first index of the maximum.
        std::size_t ref = 0;
        for (std::size_t j = 1; j < row.size(); ++j)
            if (row[j] > row[ref]) ref = j;
        ASSERT_EQ(static_cast<std::size_t>(sp.argmax), ref);
        ASSERT_EQ(sp.index.size(), std::min<std::size_t>(m, row.size()));
        ASSERT_TRUE(std::is_sorted(sp.index.begin(), sp.index.end()));
        // Every kept weight is at least every dropped weight.
        double min_kept = 1.0;
        for (int idx : sp.index) min_kept = std::min(min_kept, row[idx]);
        for (std::size_t j = 0; j < row.size(); ++j)
            if (!std::binary_search(sp.index.begin(), sp.index.end(), static_cast<int>(j))) ASSERT_LE(row[j], min_kept);
        const auto dense = densify_row(sp);
        ASSERT_EQ(dense.size(), row.size());
        ASSERT_EQ(argmax(std::span<const double>(dense)), ref);
    }
    // A near-tie that float32 cannot separate: the stored argmax still names the winner.
    const std::vector<double> close{0.3, 0.35 - 1e-12, 0.35};
    EXPECT_EQ(sparsify_row(close, 2).argmax, 2);
    EXPECT_THROW(sparsify_row(close, 0), InputError);
    SparseRow bad{3, {5}, {1.0f}, 0};
    EXPECT_THROW(densify_row(bad), FormatError);
}

TEST(Store, TraceRoundTripFull) {
    const auto f = toy_trace_file(2);
    const auto path = testutil::temp_dir("store_full") / "t.jsonl";
    write_trace(path, f);
    const auto g = read_trace(path);
    EXPECT_EQ(g.provenance.config_hash, f.provenance.config_hash);
    EXPECT_EQ(g.provenance.master_seed, 42u);
    EXPECT_EQ(g.shape, f.shape);
    EXPECT_EQ(g.extra, f.extra);
    ASSERT_EQ(g.samples.size(), 2u);
    for (std::size_t s = 0; s < 2; ++s) {
        const auto& a = f.samples[s];
        const auto& b = g.samples[s];
        EXPECT_EQ(b.trace.sample_id, a.trace.sample_id);
        EXPECT_EQ(b.trace.prompt, a.trace.prompt);
        EXPECT_EQ(b.needle, a.needle);
        ASSERT_EQ(b.trace.steps.size(), a.trace.steps.size());
        ASSERT_EQ(b.frames.size(), a.frames.size());
        ASSERT_EQ(b.spans.size(), a.spans.size());
        for (std::size_t t = 0; t < a.trace.steps.size(); ++t) {
            const auto& x = a.trace.steps[t];
            const auto& y = b.trace.steps[t];
            EXPECT_EQ(y.accepted, x.accepted);
            EXPECT_EQ(y.output.predicted_token, x.output.predicted_token);
            ASSERT_EQ(y.output.attn_rows.size(), x.output.attn_rows.size());
            for (std::size_t h = 0; h < x.output.attn_rows.size(); ++h)
                for (std::size_t j = 0; j < x.output.attn_rows[h].size(); ++j)
                    ASSERT_EQ(y.output.attn_rows[h][j], as_float(x.output.attn_rows[h][j]));
            for (std::size_t j = 0; j < x.output.final_hidden.size(); ++j)
                EXPECT_EQ(y.output.final_hidden[j], as_float(x.output.final_hidden[j]));
            EXPECT_EQ(b.frames[t].scores, a.frames[t].scores);
            EXPECT_EQ(b.spans[t].needle, a.spans[t].needle);
            EXPECT_EQ(b.spans[t].local, a.spans[t].local);
        }
    }
}

TEST(Store, SparseTraceKeepsFramesAndArgmax) {
    const auto f = toy_trace_file(1);
    const auto path = testutil::temp_dir("store_sparse") / "t.jsonl";
    write_trace(path, f, {4});
    const auto g = read_trace(path);
    const auto& a = f.samples[0].trace.steps;
    const auto& b = g.samples[0].trace.steps;
    for (std::size_t t = 0; t < a.size(); ++t)
        for (std::size_t h = 0; h < a[t].output.attn_rows.size(); ++h) {
            const auto& row = b[t].output.attn_rows[h];
            EXPECT_LE(static_cast<std::size_t>(std::count_if(row.begin(), row.end(), [](double v) { return v != 0.0; })), 4u);
            EXPECT_EQ(argmax(std::span<const double>(row)), argmax(std::span<const double>(a[t].output.attn_rows[h])));
        }
    EXPECT_EQ(g.samples[0].frames[0].scores, f.samples[0].frames[0].scores);
}

TEST(Store, RejectsOtherSchemaAndCorruptLines) {
    const auto dir = testutil::temp_dir("store_bad");
    const auto f = toy_trace_file(1);
    write_trace(dir / "good.jsonl", f);
    auto lines = lines_of(read_text(dir / "good.jsonl"));
    ASSERT_GE(lines.size(), 4u);

    auto header = json::parse(lines[0]);
    header["schema"] = "hlt/2";
    std::string text = header.dump() + "\n";
    for (std::size_t i = 1; i < lines.size(); ++i) text += lines[i] + "\n";
    write_text(dir / "v2.jsonl", text);
    try {
        read_trace(dir / "v2.jsonl");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("hlt/2"), std::string::npos);
    }

    text.clear();
    for (std::size_t i = 0; i < lines.size(); ++i) text += (i == 3 ? lines[i].substr(0, lines[i].size() / 2) : lines[i]) + "\n";
    write_text(dir / "cut.jsonl", text);
    try {
        read_trace(dir / "cut.jsonl");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
    }

    write_text(dir / "empty.jsonl", "");
    EXPECT_THROW(read_trace(dir / "empty.jsonl"), FormatError);
    EXPECT_THROW(read_trace(dir / "missing.jsonl"), InputError);
}

TEST(Store, GridCsvShapeAndJsonRoundTrip) {
    AblationGridResult g;
    g.condition = AblationCondition::Dynamic;
    for (int l : {128, 256, 512})
        for (double d : {0.0, 0.5, 1.0}) {
            GridCell c;
            c.length = l;
            c.depth = d;
            c.mean = l / 1024.0 + d;
            c.runs = 3;
            if (l == 512 && d == 1.0) {
                c.feasible = false;
                c.runs = 0;
                c.note = "too long, really";
            }
            g.cells.push_back(c);
        }
    const Provenance p{"feedfacecafebeef", 9};
    const auto m = lines_of(grid_matrix_csv(p, g));
    ASSERT_EQ(m.size(), 2u + 1u + 3u);
    EXPECT_EQ(m[0], "# config_hash=feedfacecafebeef master_seed=9");
    EXPECT_EQ(m[2], "depth,128,256,512");
    for (std::size_t r = 3; r < m.size(); ++r) EXPECT_EQ(count_char(m[r], ','), 3u);
    EXPECT_EQ(m[5], "1.000000,1.125000,1.250000,NA");

    const auto lng = lines_of(grid_long_csv(p, g));
    ASSERT_EQ(lng.size(), 2u + 9u);
    EXPECT_NE(lng.back().find("\"too long, really\""), std::string::npos);

    const auto back = grid_from_json(grid_to_json(p, g));
    ASSERT_EQ(back.cells.size(), g.cells.size());
    EXPECT_EQ(back.condition, g.condition);
    for (std::size_t i = 0; i < g.cells.size(); ++i) {
        EXPECT_EQ(back.cells[i].mean, g.cells[i].mean);
        EXPECT_EQ(back.cells[i].feasible, g.cells[i].feasible);
    }
    EXPECT_THROW(grid_from_json(json::object()), FormatError);
}

TEST(Store, RankingRoundTripAndCsv) {
    StaticRanking r;
    r.corpus = "toy";
    r.entries = {{{1, 0}, 0.5}, {{0, 3}, 0.25}};
    const Provenance p{"00000000000000aa", 1};
    const auto back = ranking_from_json(ranking_to_json(p, r));
    EXPECT_EQ(back.entries, r.entries);
    const auto csv = lines_of(static_ranking_csv(p, r));
    ASSERT_EQ(csv.size(), 4u);
    EXPECT_EQ(csv[1], "rank,head,score");
    EXPECT_EQ(csv[2], "1,L1-H0,0.500000");
    EXPECT_THROW(ranking_from_json(json::array()), FormatError);
}

TEST(Store, CsvNumbersAndProvenance) {
    EXPECT_EQ(format_number(0.1234567), "0.123457");
    EXPECT_EQ(format_number(-2.0), "-2.000000");
    EXPECT_EQ(provenance_comment({"ab", 3}), "# config_hash=ab master_seed=3\n");
    DynamismReport r;
    r.jaccard_with_static = 0.25;
    const auto d = lines_of(dynamism_csv({"ab", 3}, "toy,model", r));
    ASSERT_EQ(d.size(), 3u);
    EXPECT_EQ(d[2].rfind("\"toy,model\",0.250000,", 0), 0u);
    EXPECT_EQ(count_char(d[1], ','), count_char(d[2], ',') - 1);
}

TEST(Store, WriteTextCreatesDirectories) {
    const auto dir = testutil::temp_dir("store_text");
    write_text(dir / "a" / "b" / "c.txt", "hello\n");
    EXPECT_EQ(read_text(dir / "a" / "b" / "c.txt"), "hello\n");
    EXPECT_THROW(read_text(dir / "nope.txt"), InputError);
}
