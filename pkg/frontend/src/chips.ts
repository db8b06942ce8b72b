// Preset text prompts offered as one-click chips in the stylize panel.
export const PROMPT_CHIPS: readonly string[] = [
    'a cubism style painting',
    'pop art',
    'watercolor painting',
    'painting in the style of Fernando Botero',
];
