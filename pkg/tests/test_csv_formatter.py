import math

import numpy as np
import pytest

from burstfuse.csv_formatter import (
    format_histogram_rows, format_report_rows, get_histogram_column_order, get_report_column_order,
    summarize_report, write_csv_with_header,
)
from conftest import read_report_csv


def _result(image_id, config_id, psnr_db=30.0, **extra):
    result = {'dataset': 'kodak', 'image_id': image_id, 'config_id': config_id,
              'psnr_db': psnr_db, 'ssim': 0.9, 'sharpness': 0.01, 'wall_ms': 12.5}
    result.update(extra)
    return result


def test_rows_are_sorted_and_capped():
    rows = format_report_rows([
        _result('img2', 'oracle_n15'),
        _result('img1', 'single_frame', psnr_db=math.inf),
        _result('img1', 'bilinear'),
    ])
    assert [(r['image_id'], r['config_id']) for r in rows] == [
        ('img1', 'bilinear'), ('img1', 'single_frame'), ('img2', 'oracle_n15'),
    ]
    assert rows[1]['psnr_db'] == 99.0
    assert list(rows[0]) == get_report_column_order()


def test_malformed_results_are_skipped():
    rows = format_report_rows([_result('img1', 'bilinear'), {'image_id': 'broken'}, _result('img2', 'x', ssim='?')])
    assert [r['image_id'] for r in rows] == ['img1']


def test_optional_columns_default():
    result = _result('img1', 'bilinear')
    del result['sharpness'], result['wall_ms']
    row = format_report_rows([result])[0]
    assert math.isnan(row['sharpness'])
    assert row['wall_ms'] == 0.0


def test_histogram_rows():
    histogram = np.array([[0.5, 0.0], [0.25, 0.25]])
    rows = format_histogram_rows(histogram)
    assert len(rows) == 4
    assert list(rows[2]) == get_histogram_column_order()
    assert rows[2] == {'bin_x': 1, 'bin_y': 0, 'frac_x': 0.5, 'frac_y': 0.0, 'frequency': 0.25}


def test_header_and_body_round_trip(tmp_path):
    path = str(tmp_path / "report.csv")
    rows = format_report_rows([_result('img1', 'bilinear'), _result('img1', 'oracle_n15', psnr_db=35.0)])
    write_csv_with_header(rows, get_report_column_order(), path, {'frames': 15, 'sigma': 2.0})
    with open(path) as handle:
        assert handle.readline() == "# frames: 15\n"
        assert handle.readline() == "# sigma: 2.0\n"
    df = read_report_csv(path)
    assert list(df.columns) == get_report_column_order()
    assert df['psnr_db'].tolist() == [30.0, 35.0]


def test_summary_means_per_config():
    rows = format_report_rows([
        _result('img1', 'bilinear', psnr_db=30.0),
        _result('img2', 'bilinear', psnr_db=32.0),
        _result('img1', 'oracle_n15', psnr_db=40.0),
    ])
    summary = summarize_report(rows)
    assert summary['config_id'].tolist() == ['bilinear', 'oracle_n15']
    assert summary['psnr_db'].tolist() == pytest.approx([31.0, 40.0])
    assert summarize_report([]).empty
