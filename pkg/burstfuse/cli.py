"""
Command line entry point: burstfuse <subcommand> [options]
"""
import os
import sys
import logging
import argparse
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from burstfuse import __version__
from burstfuse.align import AlignConfig, load_fields_csv, save_fields_csv
from burstfuse.bench import (
    BenchSettings, analyze_burst_offsets, run_corruption_bench, run_frames_sweep, run_subpixel_analysis,
    run_synthetic_bench,
)
from burstfuse.config import Config, load_config
from burstfuse.csv_formatter import (
    format_histogram_rows, format_report_rows, get_histogram_column_order, get_report_column_order,
    summarize_report, write_csv_with_header,
)
from burstfuse.errors import EXIT_OK, UsageError, exit_code_for
from burstfuse.imagefiles import read_rgb_image, write_png16_rgb
from burstfuse.merge import MergeConfig, merge_burst, save_diagnostics_csv
from burstfuse.noisemodel import NoiseParams, save_tables_csv
from burstfuse.rawcore import load_burst
from burstfuse.synthburst import (
    CorruptionSpec, generate_burst_offsets, generate_linear_motion_offsets, load_offsets_csv, offset_fields,
    oracle_fields, save_synthetic_burst, synthesize_burst,
)
from burstfuse.tablecache import TableCache

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
DEFAULT_TILE_REPLACE_LEVELS = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
DEFAULT_VECTOR_NOISE_LEVELS = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25]
SYNTH_FIELDS_TILE = 16


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting with status 2"""

    def error(self, message):
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='burstfuse', description='Multi-frame super-resolution of handheld raw bursts')
    parser.add_argument('--version', action='version', version=f"burstfuse {__version__}")
    parser.add_argument('--config', help='key=value config file (applied after $BURSTFUSE_CONFIG)')
    parser.add_argument('--threads', type=int, help='worker threads (default: available parallelism)')
    parser.add_argument('--verbose', action='store_true', help='debug logging')
    parser.add_argument('--quiet', action='store_true', help='warnings and errors only')
    sub = parser.add_subparsers(dest='command', metavar='command', parser_class=_Parser)

    merge = sub.add_parser('merge', help='merge a raw burst directory into one RGB image')
    merge.add_argument('--burst', required=True, help='directory of 16-bit frames with sidecars')
    merge.add_argument('--out', required=True, help='output 16-bit RGB PNG')
    merge.add_argument('--zoom', type=float)
    merge.add_argument('--alignment', choices=['auto', 'oracle', 'csv'])
    merge.add_argument('--offsets', help='offsets CSV (frame,dx,dy) for oracle alignment')
    merge.add_argument('--fields', help='alignment fields CSV for csv alignment')
    merge.add_argument('--finish', action='store_true', default=None, help='unsharp mask and tone curve')
    merge.add_argument('--kernel', choices=['aniso', 'iso'])
    merge.add_argument('--frame-cap', type=int, dest='frame_cap')
    merge.add_argument('--no-robustness', action='store_false', dest='robustness', default=None)
    merge.add_argument('--no-noise-model', action='store_false', dest='noise_model', default=None)
    merge.add_argument('--no-motion-prior', action='store_false', dest='motion_prior', default=None)
    merge.add_argument('--no-hf-reject', action='store_false', dest='hf_reject', default=None)
    merge.add_argument('--diagnostics', help='per-frame diagnostics CSV')
    merge.add_argument('--debug-robustness', dest='debug_robustness', help='directory for the mask heatmap')
    merge.add_argument('--debug-kernels', dest='debug_kernels', help='directory for kernel heatmaps')

    synth = sub.add_parser('synth', help='synthesize a raw burst from an RGB ground truth')
    synth.add_argument('--truth', required=True, help='8- or 16-bit RGB PNG')
    synth.add_argument('--out', required=True, help='output burst directory')
    synth.add_argument('--frames', type=int, default=15)
    synth.add_argument('--sigma', type=float, default=2.0, help='offset std in pixels')
    synth.add_argument('--seed', type=int, default=0)
    synth.add_argument('--linear-step', type=float, nargs=2, metavar=('DX', 'DY'),
                       help='regular drift per frame instead of random offsets')
    synth.add_argument('--noise', type=float, nargs=2, metavar=('SLOPE', 'INTERCEPT'),
                       help='add heteroscedastic sensor noise')

    for name, help_text in (('bench', 'synthetic-burst PSNR/SSIM on a dataset'),
                            ('corrupt-bench', 'merge quality under corrupted alignment'),
                            ('frames-sweep', 'quality as a function of merged frames')):
        bench = sub.add_parser(name, help=help_text)
        bench.add_argument('--dataset', required=True, help='directory of ground-truth RGB PNGs')
        bench.add_argument('--out', required=True, help='report CSV')
        bench.add_argument('--crop', type=int, help='centre crop size')
        bench.add_argument('--frames', type=int, default=15)
        bench.add_argument('--sigma', type=float, default=2.0)
        bench.add_argument('--seeds', type=int, nargs='+', default=[0])
        bench.add_argument('--zoom', type=float)
        if name == 'bench':
            bench.add_argument('--oracle', action='store_true', help='skip the auto-alignment configuration')
        if name == 'corrupt-bench':
            bench.add_argument('--mode', choices=['tile_replace', 'vector_noise'], default='tile_replace')
            bench.add_argument('--levels', type=float, nargs='+',
                               help='p values (tile_replace) or sigma values (vector_noise)')
        if name == 'frames-sweep':
            bench.add_argument('--n', type=int, nargs='+', dest='n_values')

    analyze = sub.add_parser('analyze-offsets', help='fractional alignment offset histogram')
    source = analyze.add_mutually_exclusive_group(required=True)
    source.add_argument('--burst', help='burst directory (aligned automatically)')
    source.add_argument('--offsets', help='offsets CSV (frame,dx,dy)')
    analyze.add_argument('--bins', type=int, default=10)
    analyze.add_argument('--out', required=True, help='histogram CSV')

    calibrate = sub.add_parser('calibrate-noise', help='Monte Carlo noise tables')
    calibrate.add_argument('--slope', type=float, required=True)
    calibrate.add_argument('--intercept', type=float, required=True)
    calibrate.add_argument('--out', required=True, help='tables CSV')
    calibrate.add_argument('--bins', type=int)
    calibrate.add_argument('--samples', type=int)
    calibrate.add_argument('--seed', type=int)
    return parser


def _configure_logging(args):
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)
    logging.getLogger('burstfuse').setLevel(level)


def _overrides(args, keys: Sequence[str]) -> Dict[str, Any]:
    values = {key: getattr(args, key, None) for key in keys}
    values['threads'] = args.threads
    return values


def _merge_config(config: Config) -> MergeConfig:
    return MergeConfig.from_config(config, cache_dir=config.resolved_cache_dir())


def _cmd_merge(args, config: Config) -> int:
    burst = load_burst(args.burst, config.frame_cap)
    cfg = _merge_config(config)
    offsets = load_offsets_csv(args.offsets, burst.base_index) if args.offsets else None
    fields = load_fields_csv(args.fields, burst.shape) if args.fields else None
    result = merge_burst(burst, cfg, offsets=offsets, fields=fields)

    write_png16_rgb(args.out, result.rgb)
    if args.diagnostics:
        save_diagnostics_csv(result, args.diagnostics)
    print(f"{args.out}: {result.rgb.shape[1]}x{result.rgb.shape[0]} from {len(burst)} frames "
          f"(SNR {result.snr:.1f})")
    return EXIT_OK


def _cmd_synth(args, config: Config) -> int:
    truth = read_rgb_image(args.truth)
    height, width = truth.shape[:2]
    truth = truth[:height - height % 2, :width - width % 2]
    if args.linear_step:
        offsets = generate_linear_motion_offsets(args.frames, tuple(args.linear_step))
    else:
        offsets = generate_burst_offsets(args.frames, args.sigma, args.seed)
    noise = NoiseParams(*args.noise) if args.noise else None
    burst = synthesize_burst(truth, offsets, noise=noise, seed=args.seed)
    paths = save_synthetic_burst(burst, offsets, args.out)
    save_fields_csv(oracle_fields(offsets, burst.shape, SYNTH_FIELDS_TILE), os.path.join(args.out, 'fields.csv'))
    print(f"{args.out}: {len(paths)} frames, offsets.csv, fields.csv")
    return EXIT_OK


def _bench_settings(args, config: Config) -> BenchSettings:
    return BenchSettings(
        frames=args.frames,
        sigma=args.sigma,
        seeds=tuple(args.seeds),
        crop=args.crop,
        oracle_only=getattr(args, 'oracle', False),
        threads=config.worker_threads(),
    )


def _write_report(rows: List[Dict], path: str, header: Dict[str, object]):
    formatted = format_report_rows(rows)
    write_csv_with_header(formatted, get_report_column_order(), path, header)
    summary = summarize_report(formatted)
    if not summary.empty:
        with pd.option_context('display.width', 160):
            print(summary.to_string(index=False))


def _single_thread_merges(config: Config) -> MergeConfig:
    # Bench parallelism is across images; each merge runs on one thread
    cfg = _merge_config(config)
    return replace(cfg, threads=1)


def _cmd_bench(args, config: Config) -> int:
    settings = _bench_settings(args, config)
    cfg = _single_thread_merges(config)
    rows = run_synthetic_bench(args.dataset, cfg, settings.seeds, settings)
    _write_report(rows, args.out, settings.header(args.dataset, cfg))
    return EXIT_OK


def _cmd_corrupt_bench(args, config: Config) -> int:
    settings = _bench_settings(args, config)
    cfg = _single_thread_merges(config)
    if args.mode == 'tile_replace':
        levels = args.levels or DEFAULT_TILE_REPLACE_LEVELS
        specs = [CorruptionSpec('tile_replace', p=level) for level in levels]
    else:
        levels = args.levels or DEFAULT_VECTOR_NOISE_LEVELS
        specs = [CorruptionSpec('vector_noise', sigma=level) for level in levels]
    rows = run_corruption_bench(args.dataset, specs, cfg, settings)
    header = settings.header(args.dataset, cfg)
    header['corruption'] = args.mode
    _write_report(rows, args.out, header)
    return EXIT_OK


def _cmd_frames_sweep(args, config: Config) -> int:
    settings = _bench_settings(args, config)
    cfg = replace(_single_thread_merges(config), alignment='oracle')
    n_values = args.n_values or list(range(1, settings.frames + 1))
    rows = run_frames_sweep(args.dataset, n_values, cfg, settings)
    _write_report(rows, args.out, settings.header(args.dataset, cfg))
    return EXIT_OK


def _cmd_analyze_offsets(args, config: Config) -> int:
    if args.burst:
        burst = load_burst(args.burst, config.frame_cap)
        align = AlignConfig(config.tile_size or 16, config.pyramid_levels,
                            config.search_radius, config.lk_iterations)
        analysis = analyze_burst_offsets(burst, align, args.bins)
    else:
        offsets = load_offsets_csv(args.offsets)
        fields = offset_fields(offsets, (2, 2), 2)
        if not fields:
            raise UsageError("offset analysis needs at least one non-base frame")
        analysis = run_subpixel_analysis(fields, args.bins)

    header = {'bins': args.bins, 'coverage_x': analysis['coverage_x'], 'coverage_y': analysis['coverage_y'],
              'chi2_pvalue': f"{analysis['pvalue']:.6g}"}
    write_csv_with_header(format_histogram_rows(analysis['histogram']), get_histogram_column_order(),
                          args.out, header)
    print(f"coverage {analysis['coverage_x']}/{args.bins} (x), {analysis['coverage_y']}/{args.bins} (y); "
          f"uniformity p-value {analysis['pvalue']:.4g}")
    return EXIT_OK


def _cmd_calibrate_noise(args, config: Config) -> int:
    params = NoiseParams(args.slope, args.intercept)
    bins = args.bins or config.noise_bins
    samples = args.samples or config.noise_samples
    seed = config.noise_seed if args.seed is None else args.seed
    tables = TableCache(config.resolved_cache_dir()).get_or_create_tables(params, bins, samples, seed)
    directory = os.path.dirname(args.out)
    if directory:
        os.makedirs(directory, exist_ok=True)
    save_tables_csv(tables, args.out)
    print(f"{args.out}: {bins} brightness bins")
    return EXIT_OK


_COMMANDS = {
    'merge': (_cmd_merge, ('zoom', 'alignment', 'finish', 'kernel', 'frame_cap', 'robustness', 'noise_model',
                           'motion_prior', 'hf_reject', 'debug_robustness', 'debug_kernels')),
    'synth': (_cmd_synth, ()),
    'bench': (_cmd_bench, ('zoom',)),
    'corrupt-bench': (_cmd_corrupt_bench, ('zoom',)),
    'frames-sweep': (_cmd_frames_sweep, ('zoom',)),
    'analyze-offsets': (_cmd_analyze_offsets, ()),
    'calibrate-noise': (_cmd_calibrate_noise, ()),
}


def parse_and_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns the process exit code"""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            raise UsageError("no command given")
        _configure_logging(args)
        handler, keys = _COMMANDS[args.command]
        config = load_config(args.config, _overrides(args, keys))
        return handler(args, config)
    except SystemExit as e:
        # --help and --version
        return e.code if isinstance(e.code, int) else EXIT_OK
    except Exception as e:
        code = exit_code_for(e)
        logger.debug("Command failed", exc_info=True)
        print(f"burstfuse: {e}", file=sys.stderr)
        return code


def main():
    sys.exit(parse_and_dispatch())


if __name__ == '__main__':
    main()
