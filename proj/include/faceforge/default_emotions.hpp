#pragma once

#include <array>
#include <string_view>

namespace faceforge {

// Shipped 179-word emotion vocabulary (mirrors data/emotions.txt).
inline constexpr std::array<std::string_view, 179> kDefaultEmotionWords = {
    "happily", "sadly", "angrily", "fearfully", "joyfully", "cheerfully", "gleefully", "merrily", "excitedly",
    "eagerly", "happy", "sad", "angry", "afraid", "joyful", "cheerful", "gleeful", "merry", "excited",
    "eager", "calmly", "peacefully", "nervously", "anxiously", "worriedly", "tensely", "fretfully",
    "restlessly", "curiously", "playfully", "calm", "peaceful", "nervous", "anxious", "worried", "tense",
    "fretful", "restless", "curious", "playful", "proudly", "shyly", "bravely", "boldly", "timidly", "gently",
    "tenderly", "lovingly", "fondly", "warmly", "proud", "shy", "brave", "bold", "timid", "gentle", "tender",
    "loving", "fond", "warm", "sorrowfully", "gloomily", "miserably", "wistfully", "mournfully", "tearfully",
    "bitterly", "glumly", "dejectedly", "wearily", "sorrowful", "gloomy", "miserable", "wistful", "mournful",
    "tearful", "bitter", "glum", "dejected", "weary", "furiously", "irritably", "grumpily", "crossly",
    "sullenly", "resentfully", "hostilely", "fiercely", "savagely", "violently", "furious", "irritable",
    "grumpy", "cross", "sullen", "resentful", "hostile", "fierce", "savage", "violent", "surprisingly",
    "amazedly", "astonishingly", "shockingly", "suddenly", "startled", "surprised", "amazed", "astonished",
    "shocked", "disgusted", "disgustedly", "contemptuously", "scornfully", "disdainfully", "contemptuous",
    "scornful", "disdainful", "repulsed", "revolted", "hopefully", "hopeful", "optimistically", "optimistic",
    "confidently", "confident", "triumphantly", "triumphant", "victoriously", "delighted", "delightedly",
    "gratefully", "grateful", "thankfully", "thankful", "contentedly", "content", "satisfied", "relieved",
    "relaxed", "lonely", "lonesome", "bored", "boredly", "awkwardly", "awkward", "embarrassed", "guiltily",
    "guilty", "ashamed", "jealously", "jealous", "enviously", "envious", "romantically", "romantic",
    "passionately", "passionate", "affectionately", "affectionate", "enthusiastically", "enthusiastic",
    "energetically", "energetic", "lively", "vigorously", "desperately", "desperate", "helplessly",
    "helpless", "frantically", "frantic", "panicked", "terrified", "horrified", "scared", "frightened",
    "fearful", "uneasy",
};

}  // namespace faceforge
