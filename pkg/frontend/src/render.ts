/** File-level rendering: CSV in, SVG out. */

import { readFileSync, writeFileSync } from "node:fs";

import { CsvSchemaError, parseReport } from "./csv.js";
import { buildFigure } from "./figure.js";

export interface PlotSpec {
  input: string;
  output: string;
  /** reference-order lines to draw; defaults to 1/2 and 1 */
  slopes?: number[];
  title?: string;
}

export class RenderError extends Error {}

export const DEFAULT_SLOPES = [0.5, 1.0];

export function renderToString(csvText: string, spec: Omit<PlotSpec, "input" | "output">): string {
  const report = parseReport(csvText);
  if (report.rows.length === 0) {
    throw new RenderError("no data rows in report; nothing to plot");
  }
  return buildFigure(report, spec.slopes ?? DEFAULT_SLOPES, spec.title);
}

export function render(spec: PlotSpec): void {
  if (!spec.output.endsWith(".svg")) {
    throw new RenderError(
      `unsupported output format "${spec.output}": only .svg is supported`
    );
  }
  let text: string;
  try {
    text = readFileSync(spec.input, "utf8");
  } catch (err) {
    throw new RenderError(`cannot read ${spec.input}: ${(err as Error).message}`);
  }
  let svg: string;
  try {
    svg = renderToString(text, { slopes: spec.slopes, title: spec.title });
  } catch (err) {
    if (err instanceof CsvSchemaError) {
      throw new RenderError(`${spec.input}: ${err.message}`);
    }
    throw err;
  }
  writeFileSync(spec.output, svg);
}
