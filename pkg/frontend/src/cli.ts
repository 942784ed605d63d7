/**
 * Command line: `sdae-plot render --in report.csv --out fig.svg
 * [--slopes 0.5,1.0] [--title T]`.  Exit 0 on success, 1 on any error
 * (usage, schema mismatch, unreadable input); no file is written on error.
 */

import { pathToFileURL } from "node:url";

import { render, RenderError, DEFAULT_SLOPES } from "./render.js";

const USAGE =
  "usage: sdae-plot render --in report.csv --out fig.svg " +
  "[--slopes 0.5,1.0] [--title T]";

export function main(argv: string[]): number {
  if (argv.length === 0 || argv[0] === "--help" || argv[0] === "-h") {
    console.log(USAGE);
    return argv.length === 0 ? 1 : 0;
  }
  if (argv[0] !== "render") {
    console.error(`unknown command "${argv[0]}"\n${USAGE}`);
    return 1;
  }
  let input: string | undefined;
  let output: string | undefined;
  let slopes = DEFAULT_SLOPES;
  let title: string | undefined;
  const rest = argv.slice(1);
  for (let i = 0; i < rest.length; i++) {
    const flag = rest[i];
    const value = rest[i + 1];
    switch (flag) {
      case "--help":
        console.log(USAGE);
        return 0;
      case "--in":
      case "--out":
      case "--slopes":
      case "--title": {
        if (value === undefined) {
          console.error(`missing value for ${flag}\n${USAGE}`);
          return 1;
        }
        if (flag === "--in") input = value;
        else if (flag === "--out") output = value;
        else if (flag === "--title") title = value;
        else {
          const parsed = value.split(",").map(Number);
          if (parsed.length === 0 || parsed.some((v) => !Number.isFinite(v))) {
            console.error(`bad --slopes list "${value}"\n${USAGE}`);
            return 1;
          }
          slopes = parsed;
        }
        i++;
        break;
      }
      default:
        console.error(`unknown flag "${flag}"\n${USAGE}`);
        return 1;
    }
  }
  if (!input || !output) {
    console.error(`--in and --out are required\n${USAGE}`);
    return 1;
  }
  try {
    render({ input, output, slopes, title });
  } catch (err) {
    if (err instanceof RenderError) {
      console.error(err.message);
      return 1;
    }
    throw err;
  }
  console.log(`wrote ${output}`);
  return 0;
}

if (
  typeof process !== "undefined" &&
  process.argv[1] &&
  import.meta.url === pathToFileURL(process.argv[1]).href
) {
  process.exit(main(process.argv.slice(2)));
}
