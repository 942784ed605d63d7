/**
 * Parser for the convergence report CSV emitted by the `sdae convergence`
 * command.  Schema errors carry the offending 1-based line number.
 */

export const REPORT_HEADER =
  "problem,theta,delta_exp,delta,rms,n_paths,n_failed,seed";

export interface LevelRow {
  problem: string;
  theta: number;
  deltaExp: number;
  delta: number;
  rms: number;
  nPaths: number;
  nFailed: number;
  seed: number;
}

export interface Report {
  rows: LevelRow[];
  /** theta -> verbatim slope token from the #slope row (never re-fitted) */
  slopes: Map<number, string>;
  intercepts: Map<number, string>;
  /** distinct thetas in first-appearance order */
  thetas: number[];
}

export class CsvSchemaError extends Error {
  readonly line: number;

  constructor(line: number, message: string) {
    super(`line ${line}: ${message}`);
    this.line = line;
  }
}

function finiteNumber(cell: string, line: number, what: string): number {
  const value = Number(cell);
  if (cell.trim() === "" || !Number.isFinite(value)) {
    throw new CsvSchemaError(line, `${what} is not a finite number: "${cell}"`);
  }
  return value;
}

export function parseReport(text: string): Report {
  const lines = text.split(/\r?\n/);
  if (lines.length === 0 || lines[0].trim() === "") {
    throw new CsvSchemaError(1, "empty file (expected report header)");
  }
  if (lines[0] !== REPORT_HEADER) {
    throw new CsvSchemaError(1, `bad header; expected "${REPORT_HEADER}"`);
  }
  const rows: LevelRow[] = [];
  const slopes = new Map<number, string>();
  const intercepts = new Map<number, string>();
  const thetas: number[] = [];
  for (let i = 1; i < lines.length; i++) {
    const line = lines[i];
    const lineNo = i + 1;
    if (line.trim() === "") continue;
    const cells = line.split(",");
    if (line.startsWith("#slope") || line.startsWith("#intercept")) {
      if (cells.length !== 3) {
        throw new CsvSchemaError(lineNo, `expected 3 cells in "${cells[0]}" row`);
      }
      const theta = finiteNumber(cells[1], lineNo, "theta");
      finiteNumber(cells[2], lineNo, cells[0].slice(1));
      (line.startsWith("#slope") ? slopes : intercepts).set(theta, cells[2]);
      continue;
    }
    if (line.startsWith("#")) continue;
    if (cells.length !== 8) {
      throw new CsvSchemaError(lineNo, `expected 8 cells, got ${cells.length}`);
    }
    const row: LevelRow = {
      problem: cells[0],
      theta: finiteNumber(cells[1], lineNo, "theta"),
      deltaExp: finiteNumber(cells[2], lineNo, "delta_exp"),
      delta: finiteNumber(cells[3], lineNo, "delta"),
      rms: finiteNumber(cells[4], lineNo, "rms"),
      nPaths: finiteNumber(cells[5], lineNo, "n_paths"),
      nFailed: finiteNumber(cells[6], lineNo, "n_failed"),
      seed: finiteNumber(cells[7], lineNo, "seed"),
    };
    if (row.delta <= 0 || row.rms <= 0) {
      throw new CsvSchemaError(lineNo, "delta and rms must be positive");
    }
    rows.push(row);
    if (!thetas.includes(row.theta)) thetas.push(row.theta);
  }
  return { rows, slopes, intercepts, thetas };
}
