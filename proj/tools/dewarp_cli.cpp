// Command line front end: dataset generation, line extraction, network
// inference, evaluation, round-trip bias reporting and the optimizer demo.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dewarp/bias.hpp"
#include "dewarp/dataset.hpp"
#include "dewarp/extract.hpp"
#include "dewarp/metrics.hpp"
#include "dewarp/network.hpp"
#include "dewarp/optimize.hpp"

namespace {

using nlohmann::ordered_json;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_json_file(const std::string& path, const ordered_json& j) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw dewarp::data_error("cannot open " + path + " for writing");
    os << j.dump(2) << "\n";
    if (!os) throw dewarp::data_error("write failed: " + path);
}

void write_text_file(const std::string& path, const std::string& body) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw dewarp::data_error("cannot open " + path + " for writing");
    os << body;
    if (!os) throw dewarp::data_error("write failed: " + path);
}

std::optional<std::string> read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) return std::nullopt;
    std::string body((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.pop_back();
    return body;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw dewarp::data_error("cannot create directory " + dir);
}

// Align-corners resize through an identity field; no-op when dims match.
dewarp::Raster resize_raster(const dewarp::Raster& src, int h, int w) {
    if (src.height == h && src.width == w) return src;
    return dewarp::warp_raster(src, dewarp::DeformationField::identity(h, w));
}

dewarp::Raster to_rgb(const dewarp::Raster& src) {
    if (src.channels == 3) return src;
    dewarp::Raster out(src.height, src.width, 3);
    for (int i = 0; i < src.height * src.width; ++i)
        for (int c = 0; c < 3; ++c) out.data[3 * i + c] = src.data[i];
    return out;
}

// ---- gen-dataset ----------------------------------------------------------

struct GenArgs {
    std::string out;
    dewarp::GenConfig cfg;
};

int run_gen_dataset(const GenArgs& a) {
    dewarp::GenReport rep = dewarp::generate_dataset(a.out, a.cfg);
    std::printf("generated %d sample(s), skipped %d already complete\n", rep.generated,
                rep.skipped);
    for (const std::string& d : rep.incomplete_dirs)
        std::printf("warning: %s is incomplete\n", d.c_str());
    return rep.incomplete_dirs.empty() ? 0 : 3;
}

// ---- extract-lines --------------------------------------------------------

struct ExtractArgs {
    std::string image;
    std::string out;
    double t_low = 0.1;
    double t_high = 0.25;
    dewarp::SegmentOptions seg;
    dewarp::FilterOptions filt;
    bool no_filter = false;
};

int run_extract_lines(const ExtractArgs& a) {
    dewarp::Raster img = dewarp::read_png(a.image);
    dewarp::Raster edges = dewarp::detect_edges(img, a.t_low, a.t_high);
    std::vector<dewarp::Segment> segs = dewarp::detect_segments(edges, a.seg);
    std::size_t raw = segs.size();
    if (!a.no_filter) segs = dewarp::filter_segments(segs, a.filt);
    std::vector<dewarp::LineElement> lines;
    lines.reserve(segs.size());
    for (const dewarp::Segment& s : segs) {
        dewarp::LineElement le;
        le.kind = dewarp::LineKind::RulingLine;
        le.points = {s.a, s.b};
        lines.push_back(le);
    }
    dewarp::save_lines(a.out, lines);
    std::printf("%zu segment(s) detected, %zu kept\n", raw, segs.size());
    return 0;
}

// ---- forward --------------------------------------------------------------

struct ForwardArgs {
    std::string image;
    std::string out;
    std::string weights;  // empty: init from seed, do not save
    std::uint64_t seed = 1;
    double invert_ratio = 0.4;
    bool no_mask_bias = false;
    bool bilinear_upsample = false;
};

int run_forward(const ForwardArgs& a) {
    auto t0 = std::chrono::steady_clock::now();
    dewarp::NetworkConfig cfg;
    dewarp::WeightBundle weights;
    bool loaded = false;
    if (!a.weights.empty() && std::filesystem::exists(a.weights)) {
        weights = dewarp::load_weights(a.weights);
        dewarp::validate_weights(weights, cfg);
        loaded = true;
    } else {
        weights = dewarp::init_weights(cfg, a.seed);
        if (!a.weights.empty()) dewarp::save_weights(a.weights, weights);
    }

    dewarp::Raster input = to_rgb(dewarp::read_png(a.image));
    dewarp::Raster resized = resize_raster(input, cfg.input_size, cfg.input_size);

    dewarp::ForwardOptions opt;
    opt.use_mask_bias = !a.no_mask_bias;
    opt.upsample = a.bilinear_upsample ? dewarp::UpsampleMode::Bilinear
                                       : dewarp::UpsampleMode::Convex;
    dewarp::ForwardResult res = dewarp::forward(resized, weights, cfg, opt);

    ensure_dir(a.out);
    dewarp::save_field(a.out + "/field.dfld", res.field);
    dewarp::write_png(a.out + "/mask.png", res.smooth, 8);
    dewarp::DeformationField fm = dewarp::invert_field(res.field, a.invert_ratio);
    dewarp::write_png(a.out + "/rectified.png", dewarp::warp_raster(resized, fm), 8);

    ordered_json j;
    j["image"] = a.image;
    j["weights"] = a.weights.empty() ? ordered_json(nullptr) : ordered_json(a.weights);
    j["weights_loaded"] = loaded;
    j["seed"] = a.seed;
    j["mask_bias"] = opt.use_mask_bias;
    j["upsample"] = a.bilinear_upsample ? "bilinear" : "convex";
    j["seconds"] = seconds_since(t0);
    write_json_file(a.out + "/summary.json", j);
    return 0;
}

// ---- enhance --------------------------------------------------------------

struct EnhanceArgs {
    std::string image;
    std::string mask;
    std::string out;
};

int run_enhance(const EnhanceArgs& a) {
    dewarp::Raster img = dewarp::read_png(a.image);
    dewarp::Raster mask = dewarp::read_png(a.mask);
    if (mask.channels != 1) mask = mask.luma();
    if (mask.height != img.height || mask.width != img.width)
        throw dewarp::data_error("enhance: image and mask dimensions differ");
    dewarp::Raster out = img;
    for (int i = 0; i < img.height * img.width; ++i) {
        if (mask.data[i] >= 0.5) continue;
        for (int c = 0; c < img.channels; ++c) out.data[i * img.channels + c] = 1.0;
    }
    dewarp::write_png(a.out, out, 8);
    return 0;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
    std::string dataset;
    std::string pred;
    std::string out;
    double invert_ratio = 0.4;
    double interval = 4.0;
};

int run_eval(const EvalArgs& a) {
    std::vector<std::string> dirs = dewarp::list_complete_samples(a.dataset);
    if (dirs.empty()) throw dewarp::data_error("eval: dataset has no complete samples");

    ordered_json rows = ordered_json::array();
    struct Acc {
        double sum = 0.0;
        int n = 0;
        void add(double v) { sum += v; ++n; }
        ordered_json mean() const {
            return n ? ordered_json(sum / n) : ordered_json(nullptr);
        }
    } acc_ssim, acc_ld, acc_ad, acc_map, acc_line, acc_seg, acc_ed, acc_cer;
    int missing = 0;

    for (const std::string& dir : dirs) {
        std::string name = std::filesystem::path(dir).filename().string();
        std::string field_path = a.pred + "/" + name + ".dfld";
        if (!std::filesystem::exists(field_path)) {
            rows.push_back({{"sample", name}, {"status", "missing"}});
            ++missing;
            continue;
        }
        dewarp::LoadedSample ls = dewarp::load_sample(dir);
        dewarp::DeformationField pred = dewarp::load_field(field_path);
        if (pred.height != ls.sample.target_bm.height ||
            pred.width != ls.sample.target_bm.width)
            throw dewarp::data_error("eval: " + name + ": field dimensions differ from target");

        ordered_json row;
        row["sample"] = name;
        row["status"] = "ok";
        double ld = dewarp::local_distortion(pred, ls.sample.target_bm);
        double lm = dewarp::map_loss(pred, ls.sample.target_bm);
        row["local_distortion_px"] = ld;
        row["map_loss"] = lm;
        acc_ld.add(ld);
        acc_map.add(lm);

        dewarp::DeformationField fm_pred = dewarp::invert_field(pred, a.invert_ratio);
        dewarp::DeformationField fm_gt =
            dewarp::invert_field(ls.sample.target_bm, a.invert_ratio);
        dewarp::Raster rect_pred = dewarp::warp_raster(ls.sample.distorted, fm_pred);
        dewarp::Raster rect_gt = dewarp::warp_raster(ls.sample.distorted, fm_gt);
        int min_side = std::min(rect_pred.height, rect_pred.width);
        int levels = 1;
        while (levels < 5 && (11 << levels) <= min_side) ++levels;
        double ssim = dewarp::ms_ssim(rect_pred, rect_gt, levels);
        row["ms_ssim"] = ssim;
        acc_ssim.add(ssim);
        double ad = dewarp::aligned_distortion(rect_pred, rect_gt);
        row["aligned_distortion"] = ad;
        acc_ad.add(ad);

        dewarp::LineSupervisionResult lsr =
            dewarp::line_supervision(pred, ls.sample.target_bm, ls.sample.lines, a.interval);
        if (!lsr.empty) {
            row["line_loss"] = lsr.loss;
            row["lines_used"] = lsr.lines_used;
            acc_line.add(lsr.loss);
        }

        std::string mask_path = a.pred + "/" + name + "_mask.png";
        if (std::filesystem::exists(mask_path)) {
            dewarp::Raster pm = dewarp::read_png(mask_path);
            if (pm.channels != 1) pm = pm.luma();
            double sl = dewarp::seg_loss(pm, ls.sample.mask);
            row["seg_loss"] = sl;
            acc_seg.add(sl);
        }

        std::optional<std::string> ref_text = read_text_file(dir + "/text.txt");
        std::optional<std::string> pred_text = read_text_file(a.pred + "/" + name + ".txt");
        if (ref_text && pred_text && !ref_text->empty()) {
            std::size_t ed = dewarp::edit_distance(*pred_text, *ref_text);
            row["edit_distance"] = ed;
            row["cer"] = dewarp::cer(*pred_text, *ref_text);
            acc_ed.add(static_cast<double>(ed));
            acc_cer.add(dewarp::cer(*pred_text, *ref_text));
        }
        rows.push_back(row);
    }

    ordered_json report;
    report["dataset"] = a.dataset;
    report["pred"] = a.pred;
    report["invert_ratio"] = a.invert_ratio;
    report["samples"] = rows;
    ordered_json agg;
    agg["evaluated"] = static_cast<int>(dirs.size()) - missing;
    agg["missing"] = missing;
    agg["ms_ssim"] = acc_ssim.mean();
    agg["local_distortion_px"] = acc_ld.mean();
    agg["aligned_distortion"] = acc_ad.mean();
    agg["map_loss"] = acc_map.mean();
    agg["line_loss"] = acc_line.mean();
    agg["seg_loss"] = acc_seg.mean();
    agg["edit_distance"] = acc_ed.mean();
    agg["cer"] = acc_cer.mean();
    report["aggregate"] = agg;
    write_json_file(a.out, report);
    std::printf("evaluated %d sample(s), %d missing prediction(s)\n",
                static_cast<int>(dirs.size()) - missing, missing);
    return 0;
}

// ---- bias-report ----------------------------------------------------------

struct BiasArgs {
    std::string dataset;
    std::string out;
    std::vector<double> ratios;
};

int run_bias_report(const BiasArgs& a) {
    std::vector<std::string> dirs = dewarp::list_complete_samples(a.dataset);
    if (dirs.empty()) throw dewarp::data_error("bias-report: dataset has no complete samples");

    std::vector<dewarp::BiasInput> inputs;
    inputs.reserve(dirs.size());
    for (const std::string& dir : dirs) {
        dewarp::LoadedSample ls = dewarp::load_sample(dir);
        // The flat-side document is not stored with the sample; rebuild it
        // from the recorded seeds.
        dewarp::DocumentLayout layout =
            dewarp::make_layout(ls.meta.layout_seed, ls.meta.size, ls.meta.size);
        dewarp::RenderedDocument doc = dewarp::render_document(layout);
        dewarp::BiasInput in;
        in.image = std::move(doc.image);
        in.mask = std::move(doc.mask);
        in.lines = std::move(doc.lines);
        in.bm = ls.sample.target_bm;
        inputs.push_back(std::move(in));
    }

    std::vector<double> ratios = a.ratios;
    if (ratios.empty()) ratios = {0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0};
    std::vector<dewarp::SweepRow> sweep = dewarp::ratio_sweep(inputs, ratios);

    ensure_dir(a.out);
    write_text_file(a.out + "/sweep.csv", dewarp::sweep_csv(sweep));
    dewarp::write_png(a.out + "/sweep.png", dewarp::render_sweep_plot(sweep), 8);

    ordered_json j;
    j["dataset"] = a.dataset;
    j["samples"] = static_cast<int>(inputs.size());
    ordered_json jr = ordered_json::array();
    for (const dewarp::SweepRow& r : sweep) {
        jr.push_back({{"ratio", r.ratio},
                      {"ssim_mean", r.ssim_mean},
                      {"mask_iou_mean", r.iou_mean},
                      {"offset_mean_px", r.offset_mean},
                      {"offset_max_px", r.offset_max},
                      {"points_used", r.points_used},
                      {"points_excluded", r.points_excluded}});
    }
    j["rows"] = jr;
    write_json_file(a.out + "/report.json", j);
    std::printf("bias sweep over %zu ratio(s), %zu sample(s)\n", ratios.size(),
                inputs.size());
    return 0;
}

// ---- optimize-demo --------------------------------------------------------

struct DemoArgs {
    std::string sample;
    std::string out;
    dewarp::DemoOptions opts;
    bool signed_curvature = false;
    bool map_only = false;
};

int run_optimize_demo(const DemoArgs& a) {
    dewarp::LoadedSample ls = dewarp::load_sample(a.sample);
    dewarp::DemoOptions opts = a.opts;
    opts.mode = a.signed_curvature ? dewarp::CurvatureMode::Signed
                                   : dewarp::CurvatureMode::Absolute;
    if (a.map_only) opts.curvature_weight = 0.0;
    dewarp::DemoResult res =
        dewarp::optimize_field_demo(ls.sample.target_bm, ls.sample.lines, opts);

    ensure_dir(a.out);
    dewarp::save_field(a.out + "/result.dfld", res.field);
    std::string csv = "iteration,total,map_term,line_term\n";
    for (const dewarp::DemoIterRow& r : res.rows) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", r.iteration, r.total,
                      r.map_term, r.line_term);
        csv += buf;
    }
    write_text_file(a.out + "/loss.csv", csv);

    ordered_json j;
    j["sample"] = a.sample;
    j["iterations_run"] = res.iterations_run;
    j["converged"] = res.converged;
    j["map_initial"] = res.map_initial;
    j["map_final"] = res.map_final;
    j["line_initial"] = res.line_initial;
    j["line_final"] = res.line_final;
    j["map_reduction"] =
        res.map_initial > 0.0 ? 1.0 - res.map_final / res.map_initial : 0.0;
    j["mean_point_offset_px"] = res.mean_point_offset_px;
    write_json_file(a.out + "/report.json", j);
    std::printf("map loss %.6g -> %.6g in %d iteration(s)\n", res.map_initial,
                res.map_final, res.iterations_run);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"document rectification toolkit"};
    app.require_subcommand(1);
    app.set_config("--config")->expected(0, 1);
    app.allow_config_extras(false);

    GenArgs gen;
    CLI::App* cgen = app.add_subcommand("gen-dataset", "generate a synthetic dataset");
    cgen->add_option("--out", gen.out, "output dataset directory")->required();
    cgen->add_option("--count", gen.cfg.count, "number of samples");
    cgen->add_option("--seed", gen.cfg.seed, "master seed");
    cgen->add_option("--size", gen.cfg.size, "sample side length in pixels");
    cgen->add_option("--severity-min", gen.cfg.severity_min, "minimum deformation severity");
    cgen->add_option("--severity-max", gen.cfg.severity_max, "maximum deformation severity");
    cgen->add_option("--crop-prob", gen.cfg.crop_prob, "crop augmentation probability");
    cgen->add_option("--overlap-prob", gen.cfg.overlap_prob, "overlap blend probability");
    cgen->add_option("--invert-ratio", gen.cfg.invert_ratio, "anchor ratio for inversion");

    ExtractArgs ext;
    CLI::App* cext = app.add_subcommand("extract-lines", "detect and filter line segments");
    cext->add_option("--image", ext.image, "input image (png)")->required();
    cext->add_option("--out", ext.out, "output lines file (jsonl)")->required();
    cext->add_option("--t-low", ext.t_low, "low edge threshold, fraction of max gradient");
    cext->add_option("--t-high", ext.t_high, "high edge threshold, fraction of max gradient");
    cext->add_option("--min-length", ext.seg.min_length, "minimum segment span in pixels");
    cext->add_option("--max-rms", ext.seg.max_rms, "maximum perpendicular rms in pixels");
    cext->add_option("--alpha", ext.filt.alpha, "keep slopes below this magnitude");
    cext->add_option("--beta", ext.filt.beta, "keep slopes above this magnitude");
    cext->add_option("--slope-eps", ext.filt.eps_slope, "duplicate slope tolerance");
    cext->add_option("--offset-delta", ext.filt.delta_intercept,
                     "duplicate intercept tolerance");
    cext->add_flag("--no-filter", ext.no_filter, "emit raw segments without slope filtering");

    ForwardArgs fwd;
    CLI::App* cfwd = app.add_subcommand("forward", "run the rectification network");
    cfwd->add_option("--image", fwd.image, "input image (png)")->required();
    cfwd->add_option("--out", fwd.out, "output directory")->required();
    cfwd->add_option("--weights", fwd.weights,
                     "weight file; loaded if present, otherwise initialized and saved");
    cfwd->add_option("--seed", fwd.seed, "weight initialization seed");
    cfwd->add_option("--invert-ratio", fwd.invert_ratio, "anchor ratio for rectification");
    cfwd->add_flag("--no-mask-bias", fwd.no_mask_bias, "disable attention mask bias");
    cfwd->add_flag("--bilinear-upsample", fwd.bilinear_upsample,
                   "bilinear flow upsampling instead of learned convex weights");

    EnhanceArgs enh;
    CLI::App* cenh = app.add_subcommand("enhance", "white out background via a mask");
    cenh->add_option("--image", enh.image, "input image (png)")->required();
    cenh->add_option("--mask", enh.mask, "foreground mask (png)")->required();
    cenh->add_option("--out", enh.out, "output image (png)")->required();

    EvalArgs ev;
    CLI::App* cev = app.add_subcommand("eval", "score predicted fields against a dataset");
    cev->add_option("--dataset", ev.dataset, "dataset directory (with manifest.json)")
        ->required();
    cev->add_option("--pred", ev.pred, "directory with <sample>.dfld predictions")
        ->required();
    cev->add_option("--out", ev.out, "output report (json)")->required();
    cev->add_option("--invert-ratio", ev.invert_ratio, "anchor ratio for rectification");
    cev->add_option("--interval", ev.interval, "sampling interval for line loss, pixels");

    BiasArgs bias;
    CLI::App* cbias =
        app.add_subcommand("bias-report", "round-trip fidelity sweep over anchor ratios");
    cbias->add_option("--dataset", bias.dataset, "dataset directory")->required();
    cbias->add_option("--out", bias.out, "output directory")->required();
    cbias->add_option("--ratio", bias.ratios, "anchor ratio (repeatable)");

    DemoArgs demo;
    CLI::App* cdemo =
        app.add_subcommand("optimize-demo", "gradient descent demo on one sample");
    cdemo->add_option("--sample", demo.sample, "sample directory")->required();
    cdemo->add_option("--out", demo.out, "output directory")->required();
    cdemo->add_option("--iterations", demo.opts.iterations, "iteration cap");
    cdemo->add_option("--curvature-weight", demo.opts.curvature_weight,
                      "weight of the line curvature term");
    cdemo->add_option("--interval", demo.opts.interval, "control point spacing in pixels");
    cdemo->add_option("--coarse", demo.opts.coarse, "coarse grid side length");
    cdemo->add_option("--step", demo.opts.initial_step, "initial step size");
    cdemo->add_flag("--signed-curvature", demo.signed_curvature,
                    "signed curvature differences instead of absolute");
    cdemo->add_flag("--map-only", demo.map_only, "disable the curvature term");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (cgen->parsed()) return run_gen_dataset(gen);
        if (cext->parsed()) return run_extract_lines(ext);
        if (cfwd->parsed()) return run_forward(fwd);
        if (cenh->parsed()) return run_enhance(enh);
        if (cev->parsed()) return run_eval(ev);
        if (cbias->parsed()) return run_bias_report(bias);
        if (cdemo->parsed()) return run_optimize_demo(demo);
    } catch (const dewarp::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const dewarp::data_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const dewarp::numerical_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 4;
    }
    return 0;
}
