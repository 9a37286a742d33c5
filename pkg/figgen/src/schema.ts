/**
 * Strict parsers for the two CSV contracts emitted by the accelshape CLI.
 *
 * Any deviation from the published schemas raises SchemaError carrying the
 * name of the offending column, so a figure never silently renders from a
 * file it misunderstood.
 */
import { readFileSync } from 'fs';
import Papa from 'papaparse';

const { parse } = Papa;

export const RESULTS_COLUMNS = [
  'scenario',
  'tenant',
  'gbps',
  'iops',
  'p50_ns',
  'p99_ns',
  'policed_ops',
] as const;

export const SERIES_COLUMNS = ['window_start_ns', 'tenant', 'gbps', 'iops'] as const;

export class SchemaError extends Error {
  readonly column: string;

  constructor(column: string, detail: string) {
    super(`schema error in column "${column}": ${detail}`);
    this.name = 'SchemaError';
    this.column = column;
  }
}

export interface ResultRow {
  scenario: string;
  tenant: string;
  gbps: number;
  iops: number;
  p50_ns: number;
  p99_ns: number;
  policed_ops: number;
}

export interface SeriesRow {
  window_start_ns: number;
  tenant: string;
  gbps: number;
  iops: number;
}

const RESULTS_NUMERIC: ReadonlyArray<keyof ResultRow> = [
  'gbps',
  'iops',
  'p50_ns',
  'p99_ns',
  'policed_ops',
];

const SERIES_NUMERIC: ReadonlyArray<keyof SeriesRow> = ['window_start_ns', 'gbps', 'iops'];

function checkHeader(fields: string[] | undefined, expected: readonly string[], path: string): void {
  const seen = new Set(fields ?? []);
  for (const col of expected) {
    if (!seen.has(col)) {
      throw new SchemaError(col, `missing from header of ${path}`);
    }
  }
  for (const col of seen) {
    if (!expected.includes(col)) {
      throw new SchemaError(col, `unexpected column in ${path}`);
    }
  }
}

function parseRows<T>(
  text: string,
  path: string,
  expected: readonly string[],
  numeric: ReadonlyArray<keyof T & string>,
): T[] {
  const parsed = parse<Record<string, string>>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  checkHeader(parsed.meta.fields, expected, path);
  return parsed.data.map((raw, i) => {
    const row: Record<string, string | number> = { ...raw };
    for (const col of numeric) {
      const value = Number(raw[col]);
      if (raw[col] === undefined || raw[col] === '' || !Number.isFinite(value)) {
        throw new SchemaError(col, `row ${i + 2} of ${path} holds ${JSON.stringify(raw[col])}`);
      }
      row[col] = value;
    }
    return row as T;
  });
}

export function parseResultsCsv(text: string, path: string): ResultRow[] {
  return parseRows<ResultRow>(text, path, RESULTS_COLUMNS, RESULTS_NUMERIC);
}

export function parseSeriesCsv(text: string, path: string): SeriesRow[] {
  return parseRows<SeriesRow>(text, path, SERIES_COLUMNS, SERIES_NUMERIC);
}

export function readResultsCsv(path: string): ResultRow[] {
  return parseResultsCsv(readFileSync(path, 'utf8'), path);
}

export function readSeriesCsv(path: string): SeriesRow[] {
  return parseSeriesCsv(readFileSync(path, 'utf8'), path);
}
